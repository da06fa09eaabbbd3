"""Model bindings: public name to loadable network plus preprocessing.

A binding resolves at startup into a torch module in eval mode, a
deterministic preprocessing pipeline (resize + normalize), and the
target layer for CAM extraction, addressed by dotted attribute path
(list indices allowed, e.g. ``layer4.1.conv2``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch


@dataclass(frozen=True)
class AdapterModelBinding:
    name: str
    source: str  # "hf" (transformers repo id) | "torchvision"
    repo_id: str
    target_layer: str
    reshape: str = "none"  # "none" | "vit"
    image_size: int = 224
    mean: tuple[float, float, float] = (0.485, 0.456, 0.406)
    std: tuple[float, float, float] = (0.229, 0.224, 0.225)
    weights: str | None = None  # torchvision weights enum name, None = random init


@dataclass
class BoundModel:
    binding: AdapterModelBinding
    model: torch.nn.Module
    target_module: torch.nn.Module

    def preprocess(self, images: list[np.ndarray]) -> torch.Tensor:
        """HxWx3 float arrays in [0,1] to a normalized NCHW batch."""
        b = self.binding
        tensors = []
        for arr in images:
            t = torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32))
            t = t.permute(2, 0, 1).unsqueeze(0)
            t = torch.nn.functional.interpolate(
                t, size=(b.image_size, b.image_size), mode="bilinear",
                align_corners=False, antialias=True)
            tensors.append(t)
        batch = torch.cat(tensors, dim=0)
        mean = torch.tensor(b.mean).view(1, 3, 1, 1)
        std = torch.tensor(b.std).view(1, 3, 1, 1)
        return (batch - mean) / std

    def predict_logits(self, batch: torch.Tensor) -> np.ndarray:
        with torch.no_grad():
            output = self.model(batch)
        logits = output.logits if hasattr(output, "logits") else output
        return logits.cpu().numpy().astype(np.float64)


def resolve_module(model: torch.nn.Module, dotted: str) -> torch.nn.Module:
    node: object = model
    for part in dotted.split("."):
        node = node[int(part)] if part.isdigit() else getattr(node, part)
    if not isinstance(node, torch.nn.Module):
        raise ValueError(f"{dotted!r} does not name a module")
    return node


def load_binding(binding: AdapterModelBinding) -> BoundModel:
    """Instantiate the network; raises if the source is unavailable."""
    if binding.source == "torchvision":
        import torchvision.models as tvm

        factory = getattr(tvm, binding.repo_id)
        model = factory(weights=binding.weights)
    elif binding.source == "hf":
        from transformers import AutoModelForImageClassification

        model = AutoModelForImageClassification.from_pretrained(binding.repo_id)
    else:
        raise ValueError(f"unknown binding source {binding.source!r}")
    model.eval()
    return BoundModel(binding=binding, model=model,
                      target_module=resolve_module(model, binding.target_layer))


DEFAULT_BINDINGS = (
    AdapterModelBinding(
        name="resnet50", source="hf", repo_id="microsoft/resnet-50",
        target_layer="resnet.encoder.stages.3"),
    AdapterModelBinding(
        name="vit", source="hf", repo_id="google/vit-base-patch16-224",
        target_layer="vit.encoder.layer.11.layernorm_before", reshape="vit"),
)
