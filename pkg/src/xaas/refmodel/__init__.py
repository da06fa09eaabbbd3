"""Deterministic linear-softmax reference model and gradient explainer.

Stands in for heavyweight hosted models so every pipeline stage is
verifiable at desk scale.  Vision inputs are reduced to per-channel
block means over a ``grid x grid`` partition (so saliency has spatial
structure worth masking); tabular rows pass through unchanged apart
from categorical-to-vocabulary-index encoding.

The shipped weights were generated once from a fixed seed and are
frozen under ``golden/``; they are loaded, never regenerated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from ..core import (
    ExplanationSummary,
    ImageDataset,
    PortableRng,
    PredictionRecord,
    SaliencyMask,
    TabularDataset,
    TabularMatrix,
    TensorImage,
    derive_seed,
    digest_bytes,
    softmax,
)

VISION_MODEL = "refmodel-vision"
TABULAR_MODEL = "refmodel-tabular"
EXPLAINER_NAME = "refgrad"
_GRID = 4


def _block_bins(size: int, grid: int) -> np.ndarray:
    return (np.arange(size) * grid) // size


@dataclass(frozen=True, eq=False)
class LinearSoftmaxModel:
    """logits = W @ features(x) + b, probabilities via softmax."""

    name: str
    weights: np.ndarray  # (n_classes, n_features)
    bias: np.ndarray  # (n_classes,)
    feature_extractor: str  # "channel_means" | "identity"
    grid: int = _GRID

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ValueError("weights must be (n_classes, n_features) with matching bias")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("model parameters must be finite")
        if self.feature_extractor not in ("channel_means", "identity"):
            raise ValueError(f"unknown feature extractor {self.feature_extractor!r}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    # -- feature extraction ------------------------------------------------

    def image_features(self, img: TensorImage) -> np.ndarray:
        """Per-channel block means, ordered (block_y, block_x, channel)."""
        g = self.grid
        by = _block_bins(img.height, g)
        bx = _block_bins(img.width, g)
        sums = np.zeros((g, g, 3))
        counts = np.zeros((g, g, 1))
        np.add.at(sums, (by[:, None], bx[None, :]), img.data)
        np.add.at(counts, (by[:, None], bx[None, :]), 1.0)
        return (sums / counts).ravel()

    def encode_row(self, table: TabularMatrix, row: int) -> np.ndarray:
        """Numeric values as-is; categorical as vocabulary index."""
        feats = []
        for col, vals in zip(table.columns, table.values):
            if col.kind == "numeric":
                feats.append(float(vals[row]))
            else:
                feats.append(float(col.vocab.index(vals[row])))
        return np.asarray(feats, dtype=np.float64)

    def features(self, sample: TensorImage | np.ndarray) -> np.ndarray:
        if self.feature_extractor == "channel_means":
            if not isinstance(sample, TensorImage):
                raise ValueError("channel_means extractor requires an image")
            feats = self.image_features(sample)
        else:
            feats = np.asarray(sample, dtype=np.float64).ravel()
        if feats.shape != (self.n_features,):
            raise ValueError(f"expected {self.n_features} features, got {feats.shape}")
        return feats

    # -- inference ---------------------------------------------------------

    def predict(self, sample: TensorImage | np.ndarray) -> PredictionRecord:
        logits = self.weights @ self.features(sample) + self.bias
        return PredictionRecord.from_logits(logits)

    def predict_dataset(self, dataset: ImageDataset | TabularDataset) -> list[PredictionRecord]:
        if isinstance(dataset, ImageDataset):
            return [self.predict(img) for img in dataset.images]
        table = dataset.table
        return [self.predict(self.encode_row(table, r)) for r in range(table.n_rows)]

    # -- explanation -------------------------------------------------------

    def _feature_gradient(self, feats: np.ndarray, class_id: int) -> np.ndarray:
        """d probs[class_id] / d features, exact for softmax-linear.

        With p = softmax(W f + b):  dp_k/df = p_k * (W[k] - p @ W).
        """
        if not 0 <= class_id < self.n_classes:
            raise ValueError(f"class_id {class_id} out of range")
        probs = softmax(self.weights @ feats + self.bias)
        return probs[class_id] * (self.weights[class_id] - probs @ self.weights)

    def explain(self, sample: TensorImage | np.ndarray,
                class_id: int) -> SaliencyMask | ExplanationSummary:
        """Exact input gradient of the class probability.

        Vision masks are the per-pixel gradient summed over channels;
        each pixel inherits its block's feature gradient divided by the
        block's pixel count (the chain rule through the block mean).
        """
        feats = self.features(sample)
        grad_f = self._feature_gradient(feats, class_id)
        if self.feature_extractor == "identity":
            return ExplanationSummary(importances=grad_f, method_id=EXPLAINER_NAME)
        img: TensorImage = sample  # type: ignore[assignment]
        g = self.grid
        by = _block_bins(img.height, g)
        bx = _block_bins(img.width, g)
        counts = np.zeros((g, g, 1))
        np.add.at(counts, (by[:, None], bx[None, :]), 1.0)
        per_block = grad_f.reshape(g, g, 3) / counts
        pixel_grad = per_block[by[:, None], bx[None, :], :]
        return SaliencyMask(pixel_grad.sum(axis=2))


# ---------------------------------------------------------------------------
# Golden artifact I/O


def _golden_dir() -> Path:
    return Path(str(resources.files("xaas.refmodel") / "golden"))


def build_model(kind: str, seed: int = 1234) -> LinearSoftmaxModel:
    """Construct the reference model deterministically from a seed.

    Used once to create the shipped golden files (and by tests to check
    they have not drifted); runtime code loads the frozen artifact.
    """
    if kind == "vision":
        n_classes, n_features = 5, _GRID * _GRID * 3
        extractor = "channel_means"
        name = VISION_MODEL
    elif kind == "tabular":
        n_classes, n_features = 3, 6
        extractor = "identity"
        name = TABULAR_MODEL
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    rng = PortableRng(derive_seed(seed, kind))
    draws = rng.normals(n_classes * n_features)
    weights = draws.reshape(n_classes, n_features)
    # Bias cancels the mid-gray feature response so class scores start level.
    bias = -weights @ np.full(n_features, 0.5) if kind == "vision" \
        else rng.normals(n_classes) * 0.1
    return LinearSoftmaxModel(name=name, weights=weights, bias=bias,
                              feature_extractor=extractor)


def save_golden(model: LinearSoftmaxModel, directory: str | Path) -> dict:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    blob = np.concatenate([model.weights.ravel(), model.bias]).astype("<f8").tobytes()
    blob_name = f"{model.name}.f64"
    (directory / blob_name).write_bytes(blob)
    descriptor = {
        "name": model.name,
        "feature_extractor": model.feature_extractor,
        "grid": model.grid,
        "n_classes": model.n_classes,
        "n_features": model.n_features,
        "dtype": "<f8",
        "blob": blob_name,
        "sha256": digest_bytes(blob),
    }
    (directory / f"{model.name}.json").write_text(json.dumps(descriptor, indent=2) + "\n")
    return descriptor


def load_golden(name: str, directory: str | Path | None = None) -> LinearSoftmaxModel:
    """Load a frozen model by name, verifying the blob digest."""
    directory = Path(directory) if directory else _golden_dir()
    descriptor = json.loads((directory / f"{name}.json").read_text())
    blob = (directory / descriptor["blob"]).read_bytes()
    if digest_bytes(blob) != descriptor["sha256"]:
        raise ValueError(f"golden blob for {name} is corrupt")
    flat = np.frombuffer(blob, dtype=descriptor["dtype"]).astype(np.float64)
    n_classes, n_features = descriptor["n_classes"], descriptor["n_features"]
    weights = flat[: n_classes * n_features].reshape(n_classes, n_features)
    bias = flat[n_classes * n_features:]
    return LinearSoftmaxModel(name=descriptor["name"], weights=weights, bias=bias,
                              feature_extractor=descriptor["feature_extractor"],
                              grid=descriptor["grid"])


def builtin_model(name: str) -> LinearSoftmaxModel:
    if name not in (VISION_MODEL, TABULAR_MODEL):
        raise KeyError(name)
    return load_golden(name)
