"""Plan execution against the service roles, with provenance.

The coordinator walks the plan in dependency waves, calls each role
over the wire contract, times every call, and appends one provenance
step per call.  Step digests are computed over request/response bodies
with run-scoped fields (``run_id``, ``uri``) removed, so a replay under
a fresh run id reproduces identical digests for deterministic steps.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import httpx
import numpy as np

from ..core import SaliencyMask, digest_json, digest_scrubbed
from ..core.datasets import ImageDataset, dataset_content_digest
from ..core.types import CostRecord
from ..gateway.wire import decode_array, encode_array
from ..metrics import apply_mask
from ..refmodel import TABULAR_MODEL, VISION_MODEL, builtin_model
from ..store import ArtifactStore, ProvenanceLog, Step
from ..synth import synthetic_image_dataset, synthetic_tabular_dataset
from .config import EMBEDDED, PipelineConfig
from .plan import PipelinePlan, PlanStep
from .radar import normalize_for_radar

BUILTIN_DATASETS = ("synthetic-images", "synthetic-tabular")


class StepFailure(RuntimeError):
    def __init__(self, step_id: str, message: str):
        super().__init__(f"step {step_id} failed: {message}")
        self.step_id = step_id


@dataclass
class NominalPowerMeter:
    """Pluggable energy model: watt-hours from wall-clock seconds."""

    watts: float = 25.0

    def energy_wh(self, seconds: float) -> float:
        return self.watts * seconds / 3600.0


@dataclass
class ExecutionResult:
    run_id: str
    log: ProvenanceLog
    report: dict | None
    radar: dict | None


def _slug(step_id: str) -> str:
    return step_id.replace(":", "_")


def _payload_digest(payload) -> str:
    return digest_scrubbed(payload)


def build_clients(services: dict[str, str], store: ArtifactStore, *,
                  client_factory=None, timeout: float = 300.0) -> dict[str, httpx.Client]:
    """One HTTP client per role; embedded roles share one in-process app."""
    clients: dict[str, httpx.Client] = {}
    embedded_client = None
    for role, target in services.items():
        if target == EMBEDDED:
            if embedded_client is None:
                import warnings

                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", DeprecationWarning)
                    from fastapi.testclient import TestClient

                from ..gateway import create_app

                embedded_client = TestClient(create_app("all", store))
            clients[role] = embedded_client
        elif client_factory is not None:
            clients[role] = client_factory(target)
        else:
            clients[role] = httpx.Client(base_url=target, timeout=timeout)
    return clients


class Orchestrator:
    """Coordination center: executes one plan per run."""

    def __init__(self, store: ArtifactStore, clients: dict[str, httpx.Client], *,
                 meter: NominalPowerMeter | None = None, parallel_width: int = 4):
        self.store = store
        self.clients = clients
        self.meter = meter or NominalPowerMeter()
        self.parallel_width = max(1, parallel_width)
        self._responses: dict[str, dict] = {}
        self._steps: dict[str, Step] = {}

    # -- service access ------------------------------------------------------

    def _call(self, role: str, method: str, path: str, body: dict | None = None) -> dict:
        client = self.clients[role]
        try:
            resp = client.post(path, json=body) if method == "POST" else client.get(path)
        except httpx.HTTPError as exc:
            raise StepFailure(path, f"{role} service unreachable: {exc}")
        if resp.status_code >= 400:
            raise StepFailure(path, f"{role} returned {resp.status_code}: {resp.text[:300]}")
        return resp.json()

    def check_services(self):
        for role, client in self.clients.items():
            payload = self._call(role, "GET", "/health")
            if "role" not in payload:
                raise RuntimeError(f"{role} endpoint did not identify itself")

    def validate_references(self, config: PipelineConfig):
        """Fail before execution if a model, method or dataset is unknown."""
        models = set(self._call("model", "GET", "/models")["models"])
        methods = set(self._call("xai", "GET", "/xai")["methods"])
        for task in config.tasks:
            if task.model_name not in models:
                raise ValueError(f"model {task.model_name!r} not offered by the model service")
            missing = [a for a in task.algorithms if a not in methods]
            if missing:
                raise ValueError(f"algorithms {missing} not offered by the XAI service")
            if task.dataset_id not in BUILTIN_DATASETS:
                resp = self.clients["data"].get(f"/datasets/{task.dataset_id}")
                if resp.status_code != 200:
                    raise ValueError(f"dataset {task.dataset_id!r} is not registered")

    # -- step execution ------------------------------------------------------

    def _register_builtin(self, dataset_id: str, seed: int) -> dict:
        if dataset_id == "synthetic-images":
            ds = synthetic_image_dataset(builtin_model(VISION_MODEL), seed=seed,
                                         dataset_id=dataset_id)
            body = {
                "id": ds.dataset_id, "kind": "image", "shape": list(ds.images[0].shape),
                "items_b64": [encode_array(img.data)["b64"] for img in ds.images],
                "labels": list(ds.labels),
            }
        else:
            ds = synthetic_tabular_dataset(builtin_model(TABULAR_MODEL), seed=seed,
                                           dataset_id=dataset_id)
            table = ds.table
            body = {
                "id": ds.dataset_id, "kind": "tabular",
                "columns": [
                    {"name": c.name, "kind": c.kind,
                     **({"vocab": list(c.vocab)} if c.vocab else {})}
                    for c in table.columns],
                "rows": [[float(vals[r]) if col.kind == "numeric" else str(vals[r])
                          for col, vals in zip(table.columns, table.values)]
                         for r in range(table.n_rows)],
                "labels": list(ds.labels),
            }
        return self._call("data", "POST", "/datasets", body)

    def _artifact_ref(self, run_id: str, kind: str, producer_step: str) -> dict:
        return {"run_id": run_id, "kind": kind, "name": _slug(producer_step)}

    def _run_step(self, step: PlanStep, run_id: str, config: PipelineConfig) -> tuple[dict, dict, bool]:
        """Execute one step; returns (request, response, deterministic)."""
        p = step.params
        if step.kind == "ensure_dataset":
            request = {"dataset_id": p["dataset_id"]}
            resp = self.clients["data"].get(f"/datasets/{p['dataset_id']}")
            if resp.status_code == 404 and p["dataset_id"] in BUILTIN_DATASETS:
                self._register_builtin(p["dataset_id"], config.seed)
                resp = self.clients["data"].get(f"/datasets/{p['dataset_id']}")
            if resp.status_code != 200:
                raise StepFailure(step.step_id, f"dataset {p['dataset_id']!r} unavailable")
            manifest = resp.json()
            return request, {"dataset_id": manifest["id"],
                             "kind": manifest["kind"],
                             "content_digest": dataset_content_digest(manifest)}, True

        if step.kind == "perturb":
            request = dict(p["spec"])
            response = self._call("data", "POST", f"/datasets/{p['dataset_id']}/perturb", request)
            if response["perturbed_id"] != p["perturbed_id"]:
                raise StepFailure(step.step_id, "perturbed id does not match plan")
            return request, response, True

        if step.kind == "predict":
            request = {"dataset_id": p["dataset_id"], "run_id": run_id,
                       "artifact": _slug(step.step_id)}
            response = self._call("model", "POST", f"/models/{p['model']}/predict", request)
            return request, response, True

        if step.kind == "explain":
            preds = self._responses[p["predictions_from"]]["predictions"]
            request = {"model": p["model"], "dataset_id": p["dataset_id"],
                       "class_ids": [r["top1_index"] for r in preds],
                       "run_id": run_id, "artifact": _slug(step.step_id)}
            response = self._call("xai", "POST", f"/xai/{p['method']}/explain", request)
            return request, response, True

        if step.kind == "mask_apply":
            return self._run_mask_apply(step, p)

        if step.kind == "eval":
            request = self._eval_body(step, run_id)
            response = self._call("eval", "POST", f"/eval/{p['metric']}", request)
            return request, response, True

        if step.kind == "cost":
            return self._run_cost(step, run_id, p)

        raise StepFailure(step.step_id, f"unknown step kind {step.kind!r}")

    def _run_mask_apply(self, step: PlanStep, p: dict) -> tuple[dict, dict, bool]:
        explain_payload = self._responses[p["explain_from"]]
        if explain_payload["kind"] != "masks":
            raise StepFailure(step.step_id, "mask application needs saliency masks")
        dataset = self.store.load_dataset(p["dataset_id"])
        if not isinstance(dataset, ImageDataset):
            raise StepFailure(step.step_id, "mask application needs an image dataset")
        masks = [SaliencyMask(decode_array(enc)) for enc in explain_payload["masks"]]
        if len(masks) != len(dataset.images):
            raise StepFailure(step.step_id, "one mask per image required")
        masked = [apply_mask(img, mask) for img, mask in zip(dataset.images, masks)]
        body = {
            "id": p["masked_id"], "kind": "image", "shape": list(masked[0].shape),
            "items_b64": [encode_array(img.data)["b64"] for img in masked],
        }
        response = self._call("data", "POST", "/datasets", body)
        request = {"dataset_id": p["dataset_id"], "masked_id": p["masked_id"],
                   "masks_digest": digest_json(explain_payload["masks"])}
        return request, response, True

    def _eval_body(self, step: PlanStep, run_id: str) -> dict:
        p = step.params
        metric = p["metric"]
        body: dict = {"run_id": run_id, "artifact": _slug(step.step_id)}
        if metric == "performance":
            body.update({"predictions": self._artifact_ref(run_id, "predictions", p["predictions_from"]),
                         "dataset_id": p["dataset_id"], "top_n": p["top_n"]})
        elif metric == "ks":
            body.update({"a": self._artifact_ref(run_id, "predictions", p["a_from"]),
                         "b": self._artifact_ref(run_id, "predictions", p["b_from"])})
        elif metric == "deviation":
            body.update({"orig": self._artifact_ref(run_id, "predictions", p["orig_from"]),
                         "masked": self._artifact_ref(run_id, "predictions", p["masked_from"])})
        elif metric == "robustness":
            body["d_ks"] = [self._responses[s]["result"]["value"] for s in p["ks_from"]]
        elif metric == "resilience":
            body.update({"dev_orig": self._responses[p["dev_orig_from"]]["result"]["value"],
                         "dev_adv": self._responses[p["dev_adv_from"]]["result"]["value"]})
        else:
            raise StepFailure(step.step_id, f"unplanned metric {metric!r}")
        return body

    def _run_cost(self, step: PlanStep, run_id: str, p: dict) -> tuple[dict, dict, bool]:
        """Aggregate measured step timings into a cost record.

        t_ml covers clean and masked inference, t_xai the explanation
        step, t_eval the deviation evaluation.  Timing-bearing, so the
        step is flagged nondeterministic and skipped by replay checks.
        """
        predict_clean, explain, predict_masked, deviation = p["timed_steps"]
        t_ml = self._steps[predict_clean].seconds + self._steps[predict_masked].seconds
        record = CostRecord(
            t_ml=t_ml,
            t_xai=self._steps[explain].seconds,
            t_eval=self._steps[deviation].seconds,
            e_ml=self._steps[predict_clean].energy_wh + self._steps[predict_masked].energy_wh,
            e_xai=self._steps[explain].energy_wh,
        )
        self.store.put(run_id, "metrics", _slug(step.step_id) + "-record", record.to_dict())
        request = {"cost": record.to_dict(), "run_id": run_id,
                   "artifact": _slug(step.step_id)}
        response = self._call("eval", "POST", "/eval/cost_overhead", request)
        return request, response, False

    # -- scheduling ----------------------------------------------------------

    def execute(self, plan: PipelinePlan, config: PipelineConfig,
                run_id: str | None = None) -> ExecutionResult:
        run_id = run_id or config.run_id or f"run-{config.digest[:12]}"
        self.check_services()
        self.validate_references(config)
        log = self.store.open_run(run_id, config.digest, config.raw)
        self._responses.clear()
        self._steps.clear()

        pending = {s.step_id: s for s in plan.steps}
        done: set[str] = set()
        failed_steps: dict[str, str] = {}
        failed_pipelines: set[str] = set()
        skipped: list[str] = []

        def cancelled(step: PlanStep) -> bool:
            if step.pipelines <= failed_pipelines:
                return True
            return any(d in failed_steps or d in skipped for d in step.depends_on)

        while pending:
            for step_id in list(pending):
                if cancelled(pending[step_id]):
                    skipped.append(step_id)
                    del pending[step_id]
            ready = [s for s in pending.values() if set(s.depends_on) <= done]
            if not ready:
                if pending:  # every remaining step is blocked by failures
                    skipped.extend(pending)
                    pending.clear()
                break
            wave_results: list[tuple[PlanStep, Step, dict | None, str | None]] = []
            with ThreadPoolExecutor(max_workers=self.parallel_width) as pool:
                futures = {pool.submit(self._timed_step, s, run_id, config): s for s in ready}
                for future, pstep in futures.items():
                    wave_results.append((pstep, *future.result()))
            for pstep, recorded, response, error in sorted(
                    wave_results, key=lambda item: item[1].t_start):
                self.store.append_step(log, recorded)
                self._steps[pstep.step_id] = recorded
                if error is None:
                    self._responses[pstep.step_id] = response
                    done.add(pstep.step_id)
                else:
                    failed_steps[pstep.step_id] = error
                    failed_pipelines |= pstep.pipelines
                del pending[pstep.step_id]

        report = radar = None
        if failed_steps:
            first = next(iter(failed_steps))
            self.store.close_run(log, "failed", f"{first}: {failed_steps[first]}")
        else:
            report = self._assemble_report(plan, config, run_id)
            radar = normalize_for_radar(report)
            self.store.put(run_id, "report", "report", report)
            self.store.put(run_id, "report", "radar", radar)
            run_dir = self.store.root / "runs" / run_id
            (run_dir / "report.json").write_text(digest_safe_json(report))
            (run_dir / "radar.json").write_text(digest_safe_json(radar))
            self.store.close_run(log, "completed")
        return ExecutionResult(run_id=run_id, log=log, report=report, radar=radar)

    def _timed_step(self, step: PlanStep, run_id: str,
                    config: PipelineConfig) -> tuple[Step, dict | None, str | None]:
        t_start = time.time()
        try:
            request, response, deterministic = self._run_step(step, run_id, config)
            error = None
        except StepFailure as exc:
            request, response, deterministic = {}, None, True
            error = str(exc)
        t_end = time.time()
        seconds = t_end - t_start
        recorded = Step(
            name=step.step_id, role=step.role,
            request_digest=_payload_digest(request) if error is None else "",
            response_digest=_payload_digest(response) if error is None else "",
            t_start=t_start, t_end=t_end, seconds=seconds,
            energy_wh=self.meter.energy_wh(seconds),
            deterministic=deterministic,
        )
        return recorded, response, error

    # -- reporting -----------------------------------------------------------

    def _assemble_report(self, plan: PipelinePlan, config: PipelineConfig,
                         run_id: str) -> dict:
        from ..perturb import perturbed_dataset_id

        selected = set(config.pipelines)
        rows = []
        attributes: dict[str, dict[str, list[float]]] = {}

        def attr(model: str, name: str, value: float):
            attributes.setdefault(model, {}).setdefault(name, []).append(value)

        for task in config.tasks:
            ds, model = task.dataset_id, task.model_name
            for algorithm in task.algorithms:
                variants = [("original", None, ds)]
                variants += [(spec.label(), spec, perturbed_dataset_id(ds, spec))
                             for spec in config.perturbations if spec.kind != "identity"]
                for label, spec, variant_id in variants:
                    metrics: dict = {}
                    if "performance" in selected:
                        perf = self._responses.get(f"eval:performance:{model}:{variant_id}")
                        if perf:
                            metrics["performance"] = perf["detail"]
                            if label == "original":
                                attr(model, "performance", perf["detail"]["f1"])
                    dev_key = f"eval:deviation:{algorithm}:{model}:{variant_id}"
                    if dev_key in self._responses:
                        metrics["deviation"] = self._responses[dev_key]["result"]["value"]
                        if label == "original":
                            attr(model, "deviation", metrics["deviation"])
                    if spec is not None and "robustness" in selected:
                        ks = self._responses.get(f"eval:ks:{model}:{ds}:{label}")
                        if ks:
                            metrics["ks"] = ks["result"]["value"]
                            attr(model, "robustness", metrics["ks"])
                    if spec is not None and "resilience" in selected:
                        res = self._responses.get(
                            f"eval:resilience:{algorithm}:{model}:{ds}:{label}")
                        if res:
                            metrics["resilience"] = res["result"]["value"]
                            attr(model, "resilience", metrics["resilience"])
                    if label == "original" and "cost" in selected:
                        cost_key = f"cost:{algorithm}:{model}:{ds}"
                        if cost_key in self._responses:
                            record = self.store.get_json(
                                run_id, "metrics", _slug(cost_key) + "-record")
                            overhead = self._responses[cost_key]["detail"]
                            metrics["cost"] = {**record, **overhead}
                            attr(model, "cost", record["e_ml"] + record["e_xai"])
                    rows.append({"model": model, "algorithm": algorithm,
                                 "dataset_id": ds, "perturbation": label,
                                 "spec": spec.to_dict() if spec else None,
                                 "metrics": metrics})

        robustness_by_kind: dict[str, dict[str, float]] = {}
        for step in plan.steps:
            if step.kind == "eval" and step.params.get("metric") == "robustness":
                _, _, model, _, kind = step.step_id.split(":")
                robustness_by_kind.setdefault(model, {})[kind] = \
                    self._responses[step.step_id]["result"]["value"]

        summary_attributes = {
            model: {name: float(np.mean(vals)) for name, vals in per_model.items()}
            for model, per_model in attributes.items()
        }
        return {
            "run_id": run_id,
            "config_digest": config.digest,
            "pipelines": list(config.pipelines),
            "rows": rows,
            "summary": {
                "attributes": summary_attributes,
                "robustness_by_kind": robustness_by_kind,
            },
        }


def digest_safe_json(obj) -> str:
    import json

    return json.dumps(obj, indent=2, sort_keys=True) + "\n"
