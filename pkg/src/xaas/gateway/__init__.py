"""HTTP service layer exposing the four assessment roles.

One FastAPI app per role (``data``, ``model``, ``xai``, ``eval``), or
all roles co-hosted in a single app for desk-scale runs.  Handlers are
stateless; artifacts flow through the shared store.  External model and
explainer providers register a base URL and are proxied with inline
payloads, so they never need store access.
"""

from __future__ import annotations

import base64
import math
from dataclasses import dataclass, field
from typing import Callable

import httpx
import jsonschema
import numpy as np
from fastapi import APIRouter, Body, FastAPI, HTTPException

from .. import __version__
from ..core import (
    Column,
    ExplanationSummary,
    ImageDataset,
    PerturbationSpec,
    PredictionRecord,
    SaliencyMask,
    TabularDataset,
    TabularMatrix,
    TensorImage,
    digest_json,
    digest_scrubbed,
)
from ..core.datasets import Dataset, dataset_content_digest
from .. import metrics as metrics_mod
from .. import perturb as perturb_mod
from ..metrics import MetricValue, UndefinedMetricError
from ..refmodel import EXPLAINER_NAME, TABULAR_MODEL, VISION_MODEL, builtin_model
from ..store import ArtifactStore, DuplicateWriteError, NotFoundError
from .contract import validate
from .wire import decode_array, encode_array

ROLES = ("data", "model", "xai", "eval")
DEFAULT_TIMEOUT = 300.0


@dataclass
class ServiceEndpointConfig:
    role: str
    host: str = "127.0.0.1"
    port: int = 8000
    store_path: str = "xaas-store"

    def __post_init__(self):
        if self.role not in ROLES + ("all",):
            raise ValueError(f"role must be one of {ROLES + ('all',)}")


@dataclass
class _ServiceState:
    store: ArtifactStore
    proxy_timeout: float = DEFAULT_TIMEOUT
    client_factory: Callable[[str], httpx.Client] | None = None
    external_models: dict[str, str] = field(default_factory=dict)
    external_methods: dict[str, str] = field(default_factory=dict)
    _clients: dict[str, httpx.Client] = field(default_factory=dict)

    def client(self, base_url: str) -> httpx.Client:
        if base_url not in self._clients:
            factory = self.client_factory or (
                lambda url: httpx.Client(base_url=url, timeout=self.proxy_timeout))
            self._clients[base_url] = factory(base_url)
        return self._clients[base_url]


def _validated(body: dict, schema: str) -> dict:
    try:
        validate(body, schema)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise HTTPException(422, f"invalid request at {path}: {exc.message}")
    return body


def _proxy_post(state: _ServiceState, base_url: str, path: str, body: dict,
                response_schema: str) -> dict:
    try:
        resp = state.client(base_url).post(path, json=body)
    except httpx.HTTPError as exc:
        raise HTTPException(502, f"provider at {base_url} unreachable: {exc}")
    if resp.status_code >= 500:
        raise HTTPException(502, f"provider at {base_url} failed: {resp.text[:200]}")
    if resp.status_code >= 400:
        code = 404 if resp.status_code == 404 else 422
        raise HTTPException(code, f"provider rejected request: {resp.text[:200]}")
    payload = resp.json()
    try:
        validate(payload, response_schema)
    except jsonschema.ValidationError as exc:
        raise HTTPException(502, f"provider response violates {response_schema}: {exc.message}")
    return payload


def _persist(state: _ServiceState, run_id: str | None, kind: str, name: str | None,
             default_name: str, payload: dict) -> dict | None:
    """Store a response payload once per (run, kind, name).

    Re-posting an identical body is idempotent; a conflicting body for
    the same key is a 409.
    """
    if run_id is None:
        return None
    name = name or default_name
    try:
        artifact = state.store.put(run_id, kind, name, payload)
    except DuplicateWriteError:
        existing = state.store.get_artifact(run_id, kind, name)
        if existing.digest != digest_json(payload):
            raise HTTPException(409, f"artifact {kind}/{name} exists with different content")
        artifact = existing
    return artifact.__dict__


# ---------------------------------------------------------------------------
# Inline item handling


def _dataset_from_register_body(body: dict) -> Dataset:
    labels = tuple(body["labels"]) if body.get("labels") is not None else None
    if body["kind"] == "image":
        shape = body.get("shape")
        if not shape or len(shape) != 3:
            raise HTTPException(422, "image datasets need shape [h, w, 3]")
        images = []
        for b64 in body.get("items_b64", []):
            flat = np.frombuffer(base64.b64decode(b64), dtype="<f4")
            if flat.size != math.prod(shape):
                raise HTTPException(422, "item byte length does not match shape")
            images.append(TensorImage(flat.astype(np.float64).reshape(shape)))
        return ImageDataset(dataset_id=body["id"], images=tuple(images), labels=labels)
    columns = tuple(
        Column(c["name"], c["kind"], tuple(c["vocab"]) if "vocab" in c else None)
        for c in body.get("columns", []))
    if not columns:
        raise HTTPException(422, "tabular datasets need columns")
    rows = body.get("rows", [])
    values = []
    for j, col in enumerate(columns):
        cells = [row[j] for row in rows]
        values.append(np.array([float(v) for v in cells])
                      if col.kind == "numeric" else np.array(cells, dtype=object))
    try:
        table = TabularMatrix(columns=columns, values=tuple(values))
    except (ValueError, IndexError) as exc:
        raise HTTPException(422, str(exc))
    return TabularDataset(dataset_id=body["id"], table=table, labels=labels)


def _resolve_samples(state: _ServiceState, body: dict) -> tuple[list, str, str | None]:
    """Return (samples, kind, dataset_id) from a dataset ref or inline items.

    Image samples are TensorImage; tabular samples are encoded feature
    vectors ready for the reference model.
    """
    sample_ids = body.get("sample_ids")
    if body.get("dataset_id"):
        try:
            ds = state.store.load_dataset(body["dataset_id"])
        except NotFoundError:
            raise HTTPException(404, f"dataset {body['dataset_id']!r} not registered")
        if isinstance(ds, ImageDataset):
            samples, kind = list(ds.images), "image"
        else:
            model = builtin_model(TABULAR_MODEL)
            samples = [model.encode_row(ds.table, r) for r in range(ds.table.n_rows)]
            kind = "tabular"
        dataset_id = ds.dataset_id
    else:
        items = body["items"]
        kind = items["kind"]
        if kind == "image":
            samples = [TensorImage(decode_array(enc)) for enc in items.get("images", [])]
        else:
            samples = [np.asarray(f, dtype=np.float64) for f in items.get("features", [])]
        dataset_id = None
    if sample_ids is not None:
        try:
            samples = [samples[i] for i in sample_ids]
        except IndexError:
            raise HTTPException(422, "sample_ids out of range")
    return samples, kind, dataset_id


def _inline_items(samples: list, kind: str) -> dict:
    if kind == "image":
        return {"kind": "image", "images": [encode_array(s.data) for s in samples]}
    return {"kind": "tabular", "features": [[float(v) for v in s] for s in samples]}


# ---------------------------------------------------------------------------
# Routers


def _common_router(role: str, state: _ServiceState) -> APIRouter:
    router = APIRouter()

    @router.get("/health")
    def health():
        return {"role": role, "version": __version__}

    @router.get("/runs/{run_id}/provenance")
    def provenance(run_id: str):
        try:
            return state.store.load_provenance(run_id).to_dict()
        except NotFoundError:
            raise HTTPException(404, f"no provenance for run {run_id!r}")

    return router


def _data_router(state: _ServiceState) -> APIRouter:
    router = APIRouter()

    @router.post("/datasets")
    def register_dataset(body: dict = Body(...)):
        _validated(body, "dataset_register_request")
        ds = _dataset_from_register_body(body)
        manifest = state.store.register_dataset(ds)
        return {
            "dataset_id": manifest["id"],
            "kind": manifest["kind"],
            "count": manifest["count"],
            "content_digest": dataset_content_digest(manifest),
        }

    @router.get("/datasets/{dataset_id}")
    def dataset_manifest(dataset_id: str):
        try:
            return state.store.dataset_manifest(dataset_id)
        except NotFoundError:
            raise HTTPException(404, f"dataset {dataset_id!r} not registered")

    @router.post("/datasets/{dataset_id}/perturb")
    def perturb_dataset(dataset_id: str, body: dict = Body(...)):
        _validated(body, "perturb_request")
        try:
            spec = PerturbationSpec.from_dict(body)
        except ValueError as exc:
            raise HTTPException(422, str(exc))
        try:
            source = state.store.load_dataset(dataset_id)
        except NotFoundError:
            raise HTTPException(404, f"dataset {dataset_id!r} not registered")
        out_id = perturb_mod.perturbed_dataset_id(dataset_id, spec)
        if state.store.has_dataset(out_id):  # content-addressed: replay is a no-op
            manifest = state.store.dataset_manifest(out_id)
        else:
            try:
                perturbed = perturb_mod.apply(spec, source)
            except ValueError as exc:
                raise HTTPException(422, str(exc))
            manifest = state.store.register_dataset(perturbed)
        return {
            "perturbed_id": manifest["id"],
            "source_id": dataset_id,
            "content_digest": dataset_content_digest(manifest),
        }

    return router


def _model_router(state: _ServiceState) -> APIRouter:
    router = APIRouter()

    @router.get("/models")
    def list_models():
        return {"models": [VISION_MODEL, TABULAR_MODEL, *sorted(state.external_models)]}

    @router.post("/models/{name}/predict")
    def predict(name: str, body: dict = Body(...)):
        _validated(body, "predict_request")
        samples, kind, dataset_id = _resolve_samples(state, body)
        if name in (VISION_MODEL, TABULAR_MODEL):
            model = builtin_model(name)
            if (kind == "image") != (name == VISION_MODEL):
                raise HTTPException(422, f"model {name!r} does not accept {kind} samples")
            try:
                records = [model.predict(s).to_dict() for s in samples]
            except ValueError as exc:
                raise HTTPException(422, str(exc))
            payload = {"model": name, "dataset_id": dataset_id,
                       "count": len(records), "predictions": records}
        elif name in state.external_models:
            upstream = _proxy_post(
                state, state.external_models[name], f"/models/{name}/predict",
                {"items": _inline_items(samples, kind)}, "predict_response")
            payload = {"model": name, "dataset_id": dataset_id,
                       "count": upstream["count"], "predictions": upstream["predictions"]}
        else:
            raise HTTPException(404, f"model {name!r} not registered")
        artifact = _persist(state, body.get("run_id"), "predictions", body.get("artifact"),
                            f"{name}-{dataset_id or 'inline'}", payload)
        return {**payload, "artifact": artifact}

    return router


def _xai_router(state: _ServiceState) -> APIRouter:
    router = APIRouter()

    @router.get("/xai")
    def list_methods():
        return {"methods": [EXPLAINER_NAME, *sorted(state.external_methods)]}

    @router.post("/xai/{method}/explain")
    def explain(method: str, body: dict = Body(...)):
        _validated(body, "explain_request")
        samples, kind, dataset_id = _resolve_samples(state, body)
        class_ids = body.get("class_ids")
        if class_ids is not None and len(class_ids) != len(samples):
            raise HTTPException(422, "class_ids must match the selected samples")
        model_name = body["model"]
        if method == EXPLAINER_NAME:
            if model_name not in (VISION_MODEL, TABULAR_MODEL):
                raise HTTPException(404, f"model {model_name!r} not available to {method}")
            model = builtin_model(model_name)
            if (kind == "image") != (model_name == VISION_MODEL):
                raise HTTPException(422, f"model {model_name!r} does not accept {kind} samples")
            masks, importances, used_classes = [], [], []
            for i, sample in enumerate(samples):
                class_id = class_ids[i] if class_ids else model.predict(sample).top1_index
                if not 0 <= class_id < model.n_classes:
                    raise HTTPException(422, f"class id {class_id} out of range")
                result = model.explain(sample, class_id)
                used_classes.append(int(class_id))
                if isinstance(result, SaliencyMask):
                    masks.append(encode_array(result.values))
                else:
                    importances.append([float(v) for v in result.importances])
            payload = {"method": method, "model": model_name, "dataset_id": dataset_id,
                       "kind": "masks" if kind == "image" else "importances",
                       "count": len(samples), "class_ids": used_classes}
            payload["masks" if kind == "image" else "importances"] = (
                masks if kind == "image" else importances)
        elif method in state.external_methods:
            upstream_body = {"model": model_name, "items": _inline_items(samples, kind)}
            if class_ids is not None:
                upstream_body["class_ids"] = class_ids
            upstream = _proxy_post(state, state.external_methods[method],
                                   f"/xai/{method}/explain", upstream_body, "explain_response")
            payload = {k: upstream[k] for k in
                       ("method", "model", "kind", "count", "masks", "importances", "class_ids")
                       if k in upstream}
            payload["dataset_id"] = dataset_id
        else:
            raise HTTPException(404, f"explainer {method!r} not registered")
        artifact = _persist(state, body.get("run_id"), "masks", body.get("artifact"),
                            f"{method}-{model_name}-{dataset_id or 'inline'}", payload)
        return {**payload, "artifact": artifact}

    return router


def _registry_router(state: _ServiceState, role: str) -> APIRouter:
    """Provider registration for the model and/or xai roles.

    A co-hosted (``all``) service registers the provider for both roles,
    since adapters expose predict and explain routes side by side.
    """
    router = APIRouter()

    @router.post("/registry")
    def register(body: dict = Body(...)):
        _validated(body, "registry_request")
        if role in ("model", "all"):
            state.external_models[body["name"]] = body["base_url"]
        if role in ("xai", "all"):
            state.external_methods[body["name"]] = body["base_url"]
        return {"registered": body["name"], "role": role}

    return router


# ---------------------------------------------------------------------------
# Evaluation role


def _load_predictions(state: _ServiceState, ref: dict) -> list[PredictionRecord]:
    _validated(ref, "artifact_ref")
    try:
        payload = state.store.get_json(ref["run_id"], ref["kind"], ref["name"])
    except NotFoundError as exc:
        raise HTTPException(404, str(exc))
    return [PredictionRecord.from_dict(d) for d in payload["predictions"]]


def _deviation_pairs(orig: list[PredictionRecord],
                     masked: list[PredictionRecord]) -> list[float]:
    """Per-sample deviation, both probabilities read at the clean top-1."""
    if len(orig) != len(masked):
        raise HTTPException(422, "prediction sets differ in length")
    values = []
    for o, m in zip(orig, masked):
        values.append(metrics_mod.explanation_deviation(
            float(o.probs[o.top1_index]), float(m.probs[o.top1_index])))
    return values


def _eval_dispatch(state: _ServiceState, metric: str, body: dict) -> tuple[MetricValue, dict | None]:
    if metric == "ks":
        a = [p.top1_prob for p in _load_predictions(state, body["a"])]
        b = [p.top1_prob for p in _load_predictions(state, body["b"])]
        return MetricValue("ks", metrics_mod.ks_statistic(a, b),
                           sample_count=len(a) + len(b), aggregation="sup"), None
    if metric == "deviation":
        values = _deviation_pairs(_load_predictions(state, body["orig"]),
                                  _load_predictions(state, body["masked"]))
        return (MetricValue("deviation", float(np.median(values)),
                            sample_count=len(values), aggregation="median"),
                {"per_sample": values})
    if metric == "pcd":
        orig = _load_predictions(state, body["orig"])
        masked = _load_predictions(state, body["masked"])
        pairs = [(float(o.probs[o.top1_index]), float(m.probs[o.top1_index]))
                 for o, m in zip(orig, masked)]
        return MetricValue("pcd", metrics_mod.mean_prediction_difference(pairs),
                           sample_count=len(pairs), aggregation="mean"), None
    if metric == "resilience":
        value = metrics_mod.explanation_resilience(float(body["dev_orig"]), float(body["dev_adv"]))
        return MetricValue("resilience", value), None
    if metric == "robustness":
        vals = [float(v) for v in body["d_ks"]]
        return MetricValue("robustness", metrics_mod.robustness(vals),
                           sample_count=len(vals), aggregation="mean"), None
    if metric == "performance":
        preds = _load_predictions(state, body["predictions"])
        try:
            manifest = state.store.dataset_manifest(body["dataset_id"])
        except NotFoundError as exc:
            raise HTTPException(404, str(exc))
        labels = manifest.get("labels")
        if labels is None:
            raise HTTPException(422, f"dataset {body['dataset_id']!r} has no labels")
        detail = metrics_mod.performance_metrics(preds, labels, top_n=int(body.get("top_n", 1)))
        return (MetricValue("performance", detail["f1"],
                            sample_count=len(preds), aggregation="mean"), detail)
    if metric == "mce":
        return MetricValue("mce", metrics_mod.mce(body["err_model"], body["err_ref"]),
                           sample_count=len(body["err_model"]), aggregation="mean"), None
    if metric == "kl":
        return MetricValue("kl", metrics_mod.kl_normalized(body["p"], body["q"])), None
    if metric == "stability":
        summaries = [ExplanationSummary(np.asarray(s, dtype=np.float64))
                     for s in body["summaries"]]
        value = metrics_mod.stability(summaries, metrics_mod.kendall_tau_distance)
        return MetricValue("stability", value, sample_count=len(summaries),
                           aggregation="mean"), None
    if metric == "consistency":
        summaries = [ExplanationSummary(np.asarray(s, dtype=np.float64))
                     for s in body["summaries"]]
        try:
            anchor = summaries[int(body["x_index"])]
        except (IndexError, KeyError):
            raise HTTPException(422, "x_index must select one of the summaries")
        value = metrics_mod.consistency(summaries, anchor, metrics_mod.kendall_tau_distance)
        return MetricValue("consistency", value, sample_count=len(summaries),
                           aggregation="mean"), None
    if metric == "cost_overhead":
        from ..core.types import CostRecord
        detail = metrics_mod.cost_overhead(CostRecord.from_dict(body["cost"]))
        return MetricValue("cost_overhead", detail["r_time"]), detail
    if metric == "cliffs_delta":
        return MetricValue("cliffs_delta", metrics_mod.cliffs_delta(body["a"], body["b"]),
                           sample_count=len(body["a"]) + len(body["b"]),
                           aggregation="none"), None
    if metric == "mae":
        return MetricValue("mae", metrics_mod.mae(body["a"], body["b"])), None
    if metric == "ssim":
        params = metrics_mod.SsimParams(**body.get("params", {}))
        value = metrics_mod.ssim(decode_array(body["x"]), decode_array(body["y"]), params)
        return MetricValue("ssim", value), None
    raise HTTPException(404, f"unknown metric {metric!r}")


def _eval_router(state: _ServiceState) -> APIRouter:
    router = APIRouter()

    @router.post("/eval/{metric}")
    def evaluate(metric: str, body: dict = Body(...)):
        _validated(body, "eval_request")
        inputs = {k: v for k, v in body.items() if k not in ("run_id", "artifact")}
        try:
            result, detail = _eval_dispatch(state, metric, inputs)
        except UndefinedMetricError as exc:
            raise HTTPException(422, f"metric undefined: {exc}")
        except (KeyError, TypeError) as exc:
            raise HTTPException(422, f"malformed body for metric {metric!r}: {exc}")
        except ValueError as exc:
            raise HTTPException(422, str(exc))
        inputs_digest = digest_scrubbed(inputs)
        result = MetricValue(result.name, result.value, result.sample_count,
                             result.aggregation, inputs_digest)
        payload = {"result": result.to_dict(), "detail": detail}
        artifact = _persist(state, body.get("run_id"), "metrics", body.get("artifact"),
                            f"{metric}-{inputs_digest[:12]}", payload)
        return {**payload, "artifact": artifact}

    return router


# ---------------------------------------------------------------------------
# App assembly


def create_app(role: str, store: ArtifactStore, *,
               proxy_timeout: float = DEFAULT_TIMEOUT,
               client_factory: Callable[[str], httpx.Client] | None = None) -> FastAPI:
    """Build the FastAPI app for one role (or ``all`` co-hosted roles)."""
    if role not in ROLES + ("all",):
        raise ValueError(f"unknown role {role!r}")
    state = _ServiceState(store=store, proxy_timeout=proxy_timeout,
                          client_factory=client_factory)
    app = FastAPI(title=f"xaas {role} service", version=__version__)
    app.state.service = state
    app.include_router(_common_router(role, state))
    routers = {
        "data": _data_router,
        "model": _model_router,
        "xai": _xai_router,
        "eval": _eval_router,
    }
    targets = ROLES if role == "all" else (role,)
    for target in targets:
        app.include_router(routers[target](state))
    if role in ("model", "xai", "all"):
        app.include_router(_registry_router(state, role))
    return app


def serve(config: ServiceEndpointConfig):
    """Run one role under uvicorn (blocks until shutdown)."""
    import uvicorn

    app = create_app(config.role, ArtifactStore(config.store_path))
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
