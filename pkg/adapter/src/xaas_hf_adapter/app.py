"""Adapter service: hosted models and CAM explainers on the wire contract.

The adapter is stateless: requests carry inline image payloads and the
responses carry predictions or raw CAM masks.  On startup it runs a
schema self-test against the published contract and, when a gateway URL
is configured, registers every binding and method there.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import httpx
import numpy as np
import torch
from fastapi import Body, FastAPI, HTTPException

from .bindings import DEFAULT_BINDINGS, AdapterModelBinding, BoundModel, load_binding
from .cams import CAM_METHODS, compute_cam
from .wire import decode_array, encode_array, prediction_record

logger = logging.getLogger(__name__)

__version__ = "0.1.0"


def list_methods() -> list[str]:
    return sorted(CAM_METHODS)


def _contract_validator():
    """The published schemas, if the primary package is installed."""
    try:
        from xaas.gateway.contract import validate
    except ImportError:  # standalone deployment: run without self-checks
        return None
    return validate


@dataclass
class AdapterState:
    models: dict[str, BoundModel] = field(default_factory=dict)
    failed: dict[str, str] = field(default_factory=dict)


def _decode_items(body: dict) -> list[np.ndarray]:
    items = body.get("items")
    if not items or items.get("kind") != "image":
        raise HTTPException(422, "adapter accepts inline image items only")
    images = [decode_array(enc) for enc in items.get("images", [])]
    for arr in images:
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise HTTPException(422, f"expected HxWx3 images, got {arr.shape}")
    return images


def create_adapter_app(bindings: tuple[AdapterModelBinding, ...] = DEFAULT_BINDINGS,
                       *, eager: bool = False) -> FastAPI:
    """Build the adapter app; bindings resolve lazily unless ``eager``."""
    app = FastAPI(title="xaas hf adapter", version=__version__)
    state = AdapterState()
    catalog = {b.name: b for b in bindings}
    validate = _contract_validator()

    def bound(name: str) -> BoundModel:
        if name in state.models:
            return state.models[name]
        if name not in catalog:
            raise HTTPException(404, f"model {name!r} not bound")
        if name in state.failed:
            raise HTTPException(502, f"model {name!r} failed to load: {state.failed[name]}")
        try:
            state.models[name] = load_binding(catalog[name])
        except Exception as exc:  # weights unavailable, bad layer path, ...
            state.failed[name] = str(exc)
            raise HTTPException(502, f"model {name!r} failed to load: {exc}")
        return state.models[name]

    if eager:
        for name in catalog:
            load = load_binding(catalog[name])
            state.models[name] = load

    @app.get("/health")
    def health():
        return {"role": "model", "version": __version__}

    @app.get("/models")
    def models():
        return {"models": sorted(catalog)}

    @app.get("/xai")
    def methods():
        return {"methods": list_methods()}

    @app.post("/models/{name}/predict")
    def predict(name: str, body: dict = Body(...)):
        images = _decode_items(body)
        bm = bound(name)
        sample_ids = body.get("sample_ids")
        if sample_ids is not None:
            images = [images[i] for i in sample_ids]
        records = []
        if images:
            logits = bm.predict_logits(bm.preprocess(images))
            records = [prediction_record(row) for row in logits]
        payload = {"model": name, "dataset_id": None, "count": len(records),
                   "predictions": records, "artifact": None}
        if validate:
            validate(payload, "predict_response")
        return payload

    @app.post("/xai/{method}/explain")
    def explain(method: str, body: dict = Body(...)):
        if method not in CAM_METHODS:
            raise HTTPException(404, f"method {method!r} not offered")
        images = _decode_items(body)
        bm = bound(body["model"]) if body.get("model") in catalog else None
        if bm is None:
            raise HTTPException(404, f"model {body.get('model')!r} not bound")
        sample_ids = body.get("sample_ids")
        if sample_ids is not None:
            images = [images[i] for i in sample_ids]
        class_ids = body.get("class_ids")
        if class_ids is not None and len(class_ids) != len(images):
            raise HTTPException(422, "class_ids must match the selected samples")
        masks, used_classes = [], []
        if images:
            batch = bm.preprocess(images)
            if class_ids is None:
                with torch.no_grad():
                    logits = bm.predict_logits(batch)
                class_ids = [int(np.argmax(row)) for row in logits]
            grids, _ = compute_cam(method, bm.model, bm.target_module, batch,
                                   list(class_ids), reshape=bm.binding.reshape)
            masks = [encode_array(grid) for grid in grids]
            used_classes = [int(c) for c in class_ids]
        payload = {"method": method, "model": bm.binding.name, "dataset_id": None,
                   "kind": "masks", "count": len(masks), "masks": masks,
                   "class_ids": used_classes, "artifact": None}
        if validate:
            validate(payload, "explain_response")
        return payload

    return app


def self_test() -> None:
    """Validate canned responses against the published contract.

    Run at startup so a drifted contract fails loudly before serving.
    """
    validate = _contract_validator()
    if validate is None:
        logger.warning("primary schemas not installed; skipping contract self-test")
        return
    validate({"role": "model", "version": __version__}, "health_response")
    record = prediction_record(np.array([0.2, -1.0, 0.5]))
    validate({"model": "m", "dataset_id": None, "count": 1,
              "predictions": [record], "artifact": None}, "predict_response")
    validate({"method": "GradCAM", "model": "m", "dataset_id": None, "kind": "masks",
              "count": 1, "masks": [encode_array(np.zeros((7, 7)))],
              "class_ids": [0], "artifact": None}, "explain_response")


def register_with_gateway(gateway_url: str, base_url: str,
                          bindings: tuple[AdapterModelBinding, ...]) -> list[str]:
    """Announce every binding and CAM method at the gateway registry."""
    registered = []
    with httpx.Client(base_url=gateway_url, timeout=30.0) as client:
        for name in [b.name for b in bindings] + list_methods():
            resp = client.post("/registry", json={"name": name, "base_url": base_url})
            resp.raise_for_status()
            registered.append(name)
    return registered


def serve_adapter(bindings: tuple[AdapterModelBinding, ...] = DEFAULT_BINDINGS, *,
                  host: str = "127.0.0.1", port: int = 8010,
                  gateway_url: str | None = None):
    """Run the adapter under uvicorn, self-testing and registering first."""
    import uvicorn

    self_test()
    app = create_adapter_app(bindings)
    if gateway_url:
        registered = register_with_gateway(gateway_url, f"http://{host}:{port}", bindings)
        logger.info("registered with gateway: %s", registered)
    uvicorn.run(app, host=host, port=port, log_level="warning")
