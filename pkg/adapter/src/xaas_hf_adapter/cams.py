"""Class-activation-map explainers over a hooked target layer.

All five methods share one machinery: capture the target layer's
activations on the forward pass and their gradients with respect to the
chosen class logit on the backward pass, then combine them into a
per-location importance map.  Activations are expected as (B, C, h, w);
token-sequence layouts from vision transformers are rearranged by the
binding's reshape rule before they get here.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
import torch

EPS = 1e-8


def _gradcam(acts: np.ndarray, grads: np.ndarray) -> np.ndarray:
    weights = grads.mean(axis=(1, 2))
    return np.maximum((weights[:, None, None] * acts).sum(axis=0), 0.0)


def _hirescam(acts: np.ndarray, grads: np.ndarray) -> np.ndarray:
    return np.maximum((grads * acts).sum(axis=0), 0.0)


def _xgradcam(acts: np.ndarray, grads: np.ndarray) -> np.ndarray:
    sums = acts.sum(axis=(1, 2))
    weights = (grads * acts).sum(axis=(1, 2)) / (sums + EPS)
    return np.maximum((weights[:, None, None] * acts).sum(axis=0), 0.0)


def _layercam(acts: np.ndarray, grads: np.ndarray) -> np.ndarray:
    return np.maximum((np.maximum(grads, 0.0) * acts).sum(axis=0), 0.0)


def _gradcam_plus_plus(acts: np.ndarray, grads: np.ndarray) -> np.ndarray:
    grads_sq = grads**2
    denom = 2.0 * grads_sq + (acts.sum(axis=(1, 2))[:, None, None]) * grads**3
    alpha = np.where(denom != 0.0, grads_sq / (denom + EPS), 0.0)
    weights = (alpha * np.maximum(grads, 0.0)).sum(axis=(1, 2))
    return np.maximum((weights[:, None, None] * acts).sum(axis=0), 0.0)


CAM_METHODS: dict[str, Callable[[np.ndarray, np.ndarray], np.ndarray]] = {
    "GradCAM": _gradcam,
    "GradCAMPlusPlus": _gradcam_plus_plus,
    "HiResCAM": _hirescam,
    "XGradCAM": _xgradcam,
    "LayerCAM": _layercam,
}


def vit_tokens_to_grid(tensor: torch.Tensor) -> torch.Tensor:
    """(B, 1 + h*w, C) token activations to a (B, C, h, w) grid.

    Drops the class token; the remaining token count must be square.
    """
    tokens = tensor[:, 1:, :]
    side = int(round(tokens.shape[1] ** 0.5))
    if side * side != tokens.shape[1]:
        raise ValueError(f"token count {tokens.shape[1]} is not a square grid")
    return tokens.reshape(tokens.shape[0], side, side, -1).permute(0, 3, 1, 2)


RESHAPE_RULES: dict[str, Callable[[torch.Tensor], torch.Tensor]] = {
    "none": lambda t: t,
    "vit": vit_tokens_to_grid,
}


class LayerProbe:
    """Forward/backward hooks on one module, collecting (acts, grads)."""

    def __init__(self, module: torch.nn.Module, reshape: str = "none"):
        self._reshape = RESHAPE_RULES[reshape]
        self.activations: torch.Tensor | None = None
        self.gradients: torch.Tensor | None = None
        self._handle = module.register_forward_hook(self._on_forward)

    def _on_forward(self, module, args, output):
        tensor = output[0] if isinstance(output, (tuple, list)) else output
        tensor = self._reshape(tensor)
        self.activations = tensor.detach()
        tensor.register_hook(self._on_grad)

    def _on_grad(self, grad: torch.Tensor):
        self.gradients = grad.detach()

    def close(self):
        self._handle.remove()


def compute_cam(method: str, model: torch.nn.Module, target_module: torch.nn.Module,
                batch: torch.Tensor, class_ids: list[int], *,
                reshape: str = "none") -> tuple[np.ndarray, list[dict]]:
    """Run the model once per input and derive one CAM mask each.

    Returns (masks array of shape (B, h', w'), prediction records).
    The gradient target is the chosen class logit.
    """
    if method not in CAM_METHODS:
        raise KeyError(method)
    combine = CAM_METHODS[method]
    from .wire import prediction_record

    masks, records = [], []
    for i in range(batch.shape[0]):
        probe = LayerProbe(target_module, reshape)
        try:
            model.zero_grad(set_to_none=True)
            sample = batch[i:i + 1].requires_grad_(True)
            output = model(sample)
            logits = output.logits if hasattr(output, "logits") else output
            class_id = class_ids[i] if class_ids else int(logits[0].argmax())
            logits[0, class_id].backward()
            if probe.activations is None or probe.gradients is None:
                raise RuntimeError("target layer saw no activations or gradients")
            acts = probe.activations[0].cpu().numpy().astype(np.float64)
            grads = probe.gradients[0].cpu().numpy().astype(np.float64)
            masks.append(combine(acts, grads))
            records.append(prediction_record(logits[0].detach().cpu().numpy()))
        finally:
            probe.close()
    return np.stack(masks), records
