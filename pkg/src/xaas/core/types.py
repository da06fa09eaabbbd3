"""Domain types shared by every pipeline stage.

All types are immutable after construction (arrays are marked read-only)
so they can be shared freely across concurrent tasks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

IMAGE_CHANNELS = 3

PERTURBATION_KINDS = ("gaussian_noise", "defocus_blur", "pixelate", "tabular_noise", "identity")
STOCHASTIC_KINDS = ("gaussian_noise", "tabular_noise")
IMAGE_KINDS = ("gaussian_noise", "defocus_blur", "pixelate", "identity")


def softmax(logits: np.ndarray | Sequence[float]) -> np.ndarray:
    """Softmax probabilities, numerically stable under constant shifts.

    The maximum logit is subtracted before exponentiation, which leaves
    the result mathematically unchanged but keeps ``exp`` in range.
    """
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("softmax requires a non-empty 1-D vector")
    if not np.all(np.isfinite(arr)):
        raise ValueError("softmax requires finite logits")
    shifted = arr - arr.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TensorImage:
    """An H x W x 3 float image with values clamped to [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != IMAGE_CHANNELS:
            raise ValueError(f"image must be HxWx{IMAGE_CHANNELS}, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image values must be finite")
        object.__setattr__(self, "data", _readonly(np.clip(arr, 0.0, 1.0)))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class Column:
    name: str
    kind: str  # "numeric" | "categorical"
    vocab: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("numeric", "categorical"):
            raise ValueError(f"unknown column kind {self.kind!r}")
        if self.kind == "categorical" and not self.vocab:
            raise ValueError(f"categorical column {self.name!r} needs a vocabulary")


@dataclass(frozen=True, eq=False)
class TabularMatrix:
    """Rectangular table of numeric and categorical columns.

    Stored column-major: numeric columns as float64 arrays, categorical
    columns as string arrays whose values are drawn from the column's
    declared vocabulary.
    """

    columns: tuple[Column, ...]
    values: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.columns) != len(self.values):
            raise ValueError("one value array per column required")
        if not self.columns:
            raise ValueError("table needs at least one column")
        n_rows = len(self.values[0])
        cols = []
        for col, vals in zip(self.columns, self.values):
            if len(vals) != n_rows:
                raise ValueError(f"column {col.name!r} breaks rectangularity")
            if col.kind == "numeric":
                arr = np.asarray(vals, dtype=np.float64)
                if not np.all(np.isfinite(arr)):
                    raise ValueError(f"numeric column {col.name!r} has non-finite values")
            else:
                arr = np.asarray(vals, dtype=object)
                bad = set(arr) - set(col.vocab or ())
                if bad:
                    raise ValueError(f"column {col.name!r} has values outside vocabulary: {sorted(bad)}")
            cols.append(_readonly(arr))
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "values", tuple(cols))

    @property
    def n_rows(self) -> int:
        return len(self.values[0])

    @property
    def n_columns(self) -> int:
        return len(self.columns)

    def column(self, name: str) -> np.ndarray:
        for col, vals in zip(self.columns, self.values):
            if col.name == name:
                return vals
        raise KeyError(name)


@dataclass(frozen=True, eq=False)
class PredictionRecord:
    """Logits plus derived softmax probabilities for one sample."""

    logits: np.ndarray
    probs: np.ndarray
    top1_index: int
    top1_prob: float

    def __post_init__(self):
        logits = _readonly(np.asarray(self.logits, dtype=np.float64))
        probs = _readonly(np.asarray(self.probs, dtype=np.float64))
        if logits.shape != probs.shape or logits.ndim != 1:
            raise ValueError("logits and probs must be matching 1-D vectors")
        if abs(float(probs.sum()) - 1.0) > 1e-9:
            raise ValueError("probs must sum to 1")
        if np.max(np.abs(probs - softmax(logits))) > 1e-9:
            raise ValueError("probs must equal softmax(logits)")
        if self.top1_index != int(np.argmax(probs)):
            raise ValueError("top1_index must be the argmax of probs")
        if abs(self.top1_prob - float(probs[self.top1_index])) > 1e-12:
            raise ValueError("top1_prob must be max(probs)")
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_logits(cls, logits: np.ndarray | Sequence[float]) -> "PredictionRecord":
        logits = np.asarray(logits, dtype=np.float64)
        probs = softmax(logits)
        top1 = int(np.argmax(probs))
        return cls(logits=logits, probs=probs, top1_index=top1, top1_prob=float(probs[top1]))

    @property
    def n_classes(self) -> int:
        return len(self.logits)

    def to_dict(self) -> dict:
        return {
            "logits": [float(v) for v in self.logits],
            "probs": [float(v) for v in self.probs],
            "top1_index": self.top1_index,
            "top1_prob": self.top1_prob,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PredictionRecord":
        return cls(
            logits=np.asarray(d["logits"], dtype=np.float64),
            probs=np.asarray(d["probs"], dtype=np.float64),
            top1_index=int(d["top1_index"]),
            top1_prob=float(d["top1_prob"]),
        )


@dataclass(frozen=True, eq=False)
class SaliencyMask:
    """Unnormalized 2-D importance grid produced by an explainer."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError("saliency mask must be 2-D")
        if not np.all(np.isfinite(arr)):
            raise ValueError("saliency mask must be finite")
        object.__setattr__(self, "values", _readonly(arr))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class ExplanationSummary:
    """Per-feature importance vector for one tabular sample or method."""

    importances: np.ndarray
    method_id: str = ""

    def __post_init__(self):
        arr = np.asarray(self.importances, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("importances must be a non-empty 1-D vector")
        if not np.all(np.isfinite(arr)):
            raise ValueError("importances must be finite")
        object.__setattr__(self, "importances", _readonly(arr))

    def __len__(self) -> int:
        return len(self.importances)


@dataclass(frozen=True)
class PerturbationSpec:
    """Corruption kind, severity level and RNG seed for one perturbation."""

    kind: str
    severity: int
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in PERTURBATION_KINDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if self.kind == "identity":
            if self.severity != 0:
                raise ValueError("identity perturbation must have severity 0")
        elif self.severity not in (1, 2, 3):
            raise ValueError(f"severity must be 1..3, got {self.severity}")
        if self.kind in STOCHASTIC_KINDS and self.seed is None:
            raise ValueError(f"{self.kind} requires a seed")

    @property
    def is_stochastic(self) -> bool:
        return self.kind in STOCHASTIC_KINDS

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind, "severity": self.severity}
        if self.seed is not None:
            d["seed"] = int(self.seed)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbationSpec":
        return cls(kind=d["kind"], severity=int(d["severity"]), seed=d.get("seed"))

    def label(self) -> str:
        return "original" if self.kind == "identity" else f"{self.kind}_{self.severity}"


@dataclass(frozen=True)
class CostRecord:
    """Wall-clock seconds and watt-hours per pipeline stage."""

    t_ml: float
    t_xai: float
    t_eval: float = 0.0
    e_ml: float = 0.0
    e_xai: float = 0.0

    def __post_init__(self):
        for name in ("t_ml", "t_xai", "t_eval", "e_ml", "e_xai"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def to_dict(self) -> dict:
        return {
            "t_ml": self.t_ml,
            "t_xai": self.t_xai,
            "t_eval": self.t_eval,
            "e_ml": self.e_ml,
            "e_xai": self.e_xai,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CostRecord":
        return cls(**{k: float(d.get(k, 0.0)) for k in ("t_ml", "t_xai", "t_eval", "e_ml", "e_xai")})
