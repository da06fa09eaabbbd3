"""Quality-attribute metrics.

Each function is pure and stateless.  Dataset-level aggregations take
pre-computed per-sample values, so callers can parallelize the map phase
and keep the reduce phase here.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..core import ExplanationSummary, PredictionRecord, SaliencyMask, TensorImage
from ..core.types import CostRecord


class UndefinedMetricError(ValueError):
    """A metric is mathematically undefined for the given inputs."""


@dataclass(frozen=True)
class MetricValue:
    """A named metric result with its aggregation provenance."""

    name: str
    value: float
    sample_count: int = 1
    aggregation: str = "none"  # mean | median | sup | none
    inputs_digest: str | None = None

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"metric {self.name!r} is not finite: {self.value}")
        if self.aggregation not in ("mean", "median", "sup", "none"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.aggregation != "none" and self.sample_count < 1:
            raise ValueError("aggregated metrics need sample_count >= 1")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "value": self.value,
            "sample_count": self.sample_count,
            "aggregation": self.aggregation,
            "inputs_digest": self.inputs_digest,
        }


# ---------------------------------------------------------------------------
# Prediction-change metrics


def prediction_change(s_orig: float, s_masked: float) -> tuple[float, float | None]:
    """Absolute and relative change between two prediction scores.

    Returns ``(delta, pct)`` where ``delta = |s_orig - s_masked|`` and
    ``pct = delta / |s_orig|``.  When ``s_orig`` is zero the percentage
    is undefined and returned as ``None``.
    """
    delta = abs(s_orig - s_masked)
    if s_orig == 0.0:
        return delta, None
    return delta, delta / abs(s_orig)


def mean_prediction_difference(pairs: Sequence[tuple[float, float]]) -> float:
    """Mean absolute score difference over (original, masked) pairs."""
    if not pairs:
        raise ValueError("mean_prediction_difference needs at least one pair")
    return float(np.mean([abs(o - m) for o, m in pairs]))


def kl_normalized(p: np.ndarray | Sequence[float], q: np.ndarray | Sequence[float]) -> float:
    """KL divergence of p from q in nats, normalized by ln(n).

    Terms with ``p_i = 0`` contribute zero; a zero in ``q`` where ``p``
    is positive makes the divergence infinite and raises.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1 or len(p) < 2:
        raise ValueError("p and q must be matching 1-D distributions with n >= 2")
    for name, dist in (("p", p), ("q", q)):
        if np.any(dist < 0) or abs(float(dist.sum()) - 1.0) > 1e-9:
            raise ValueError(f"{name} is not a probability distribution")
    support = p > 0
    if np.any(q[support] == 0):
        raise UndefinedMetricError("q has zero mass where p is positive (infinite divergence)")
    div = float(np.sum(p[support] * np.log(p[support] / q[support])))
    return div / math.log(len(p))


# ---------------------------------------------------------------------------
# Robustness


def ks_statistic(a: np.ndarray | Sequence[float], b: np.ndarray | Sequence[float]) -> float:
    """Two-sample Kolmogorov-Smirnov statistic.

    The supremum of ``|ECDF_a(x) - ECDF_b(x)|`` over all sample points
    of both samples.  Inputs here are per-sample top-1 probabilities of
    the original and perturbed runs.
    """
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise ValueError("ks_statistic needs two non-empty samples")
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / a.size
    cdf_b = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


def robustness(d_ks_by_severity: Sequence[float]) -> float:
    """Mean K-S divergence across severity levels (smaller is better)."""
    if not len(d_ks_by_severity):
        raise ValueError("robustness needs at least one severity level")
    return float(np.mean(d_ks_by_severity))


def mce(err_model: Sequence[float], err_ref: Sequence[float]) -> float:
    """Mean corruption error: severity-mean of model/reference error ratios."""
    if len(err_model) != len(err_ref) or not len(err_model):
        raise ValueError("mce needs equal-length non-empty error vectors")
    err_ref = np.asarray(err_ref, dtype=np.float64)
    if np.any(err_ref <= 0):
        raise UndefinedMetricError("reference error rates must be positive")
    return float(np.mean(np.asarray(err_model, dtype=np.float64) / err_ref))


# ---------------------------------------------------------------------------
# Saliency masking and deviation


def normalize_mask(m: SaliencyMask) -> SaliencyMask:
    """Min-max normalize to [0, 1]; a constant mask becomes all ones.

    Uniform importance carries no ranking information, so the degenerate
    case maps to the unmasked image rather than a divide-by-zero.
    """
    values = m.values
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return SaliencyMask(np.ones_like(values))
    return SaliencyMask((values - lo) / (hi - lo))


def resize_mask(m: SaliencyMask, height: int, width: int) -> SaliencyMask:
    """Bilinear resize using half-pixel-center sampling, edges clamped."""
    if (m.height, m.width) == (height, width):
        return m

    def axis_coords(dst: int, src: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        pos = (np.arange(dst) + 0.5) * (src / dst) - 0.5
        pos = np.clip(pos, 0.0, src - 1.0)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, src - 1)
        return lo, hi, pos - lo

    y0, y1, wy = axis_coords(height, m.height)
    x0, x1, wx = axis_coords(width, m.width)
    v = m.values
    top = v[np.ix_(y0, x0)] * (1 - wx) + v[np.ix_(y0, x1)] * wx
    bottom = v[np.ix_(y1, x0)] * (1 - wx) + v[np.ix_(y1, x1)] * wx
    return SaliencyMask(top * (1 - wy[:, None]) + bottom * wy[:, None])


def apply_mask(img: TensorImage, m: SaliencyMask) -> TensorImage:
    """Multiply each channel by the normalized mask.

    The mask is first resized to the image dimensions, then min-max
    normalized (in that order, so interpolation overshoot cannot push
    values outside [0, 1]), then broadcast across the three channels.
    """
    m = resize_mask(m, img.height, img.width)
    m = normalize_mask(m)
    return TensorImage(img.data * m.values[:, :, None])


def explanation_deviation(p_orig: float, p_masked: float) -> float:
    """One minus the probability drop caused by masking.

    Both probabilities are read at the original image's top-1 class.
    Values above one mean masking raised the model's confidence; they
    are reported as-is, not clamped.
    """
    return 1.0 - (p_orig - p_masked)


def explanation_resilience(dev_orig: float, dev_adv: float) -> float:
    """Drop in explanation deviation under perturbation (smaller is better)."""
    return dev_orig - dev_adv


# ---------------------------------------------------------------------------
# Explanation-summary metrics

DistanceFn = Callable[[ExplanationSummary, ExplanationSummary], float]


def kendall_tau_distance(a: ExplanationSummary, b: ExplanationSummary) -> float:
    """Normalized Kendall tau distance between two importance rankings.

    The fraction of feature pairs ordered strictly oppositely by the two
    summaries, out of all C(n, 2) pairs.  Default pair distance for
    tabular explanation summaries.
    """
    x, y = a.importances, b.importances
    if len(x) != len(y):
        raise ValueError("summaries must have equal length")
    n = len(x)
    if n < 2:
        raise ValueError("need at least two features to compare rankings")
    discordant = 0
    for i, j in itertools.combinations(range(n), 2):
        if (x[i] - x[j]) * (y[i] - y[j]) < 0:
            discordant += 1
    return discordant / math.comb(n, 2)


def stability(summaries: Sequence[ExplanationSummary], f_d: DistanceFn) -> float:
    """Mean pair distance over all C(m, 2) unordered summary pairs."""
    m = len(summaries)
    if m < 2:
        raise ValueError("stability needs at least two summaries")
    lengths = {len(s) for s in summaries}
    if len(lengths) > 1:
        raise ValueError("summaries must have equal length")
    distances = [f_d(si, sj) for si, sj in itertools.combinations(summaries, 2)]
    return float(np.mean(distances))


def consistency(summaries: Sequence[ExplanationSummary], x: ExplanationSummary,
                f_d: DistanceFn) -> float:
    """Mean distance from summary ``x`` to every other summary."""
    if not any(s is x for s in summaries):
        raise ValueError("x must be one of the summaries")
    if len(summaries) < 2:
        raise ValueError("consistency needs at least two summaries")
    others = [s for s in summaries if s is not x]
    if not others:
        raise ValueError("summaries must contain entries other than x")
    return float(np.mean([f_d(x, s) for s in others]))


# ---------------------------------------------------------------------------
# Image similarity


def mae(a: np.ndarray | Sequence[float], b: np.ndarray | Sequence[float]) -> float:
    """Mean absolute error between two equal-length value sequences."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("mae needs at least one value")
    return float(np.mean(np.abs(a - b)))


@dataclass(frozen=True)
class SsimParams:
    window: int = 7
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError("window must be odd and >= 3")
        if self.k1 <= 0 or self.k2 <= 0 or self.dynamic_range <= 0:
            raise ValueError("k1, k2 and dynamic range must be positive")

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2


def ssim(x: np.ndarray, y: np.ndarray, params: SsimParams = SsimParams()) -> float:
    """Mean structural similarity over sliding windows.

    Per window: ``(2*mx*my + C1)(2*cov + C2) / ((mx^2+my^2+C1)(vx+vy+C2))``
    with population moments over a square uniform window, averaged over
    every full window position.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2:
        raise ValueError("ssim needs two 2-D arrays of equal shape")
    w = params.window
    if x.shape[0] < w or x.shape[1] < w:
        raise ValueError(f"image {x.shape} smaller than {w}x{w} window")
    wx = np.lib.stride_tricks.sliding_window_view(x, (w, w))
    wy = np.lib.stride_tricks.sliding_window_view(y, (w, w))
    mx = wx.mean(axis=(2, 3))
    my = wy.mean(axis=(2, 3))
    vx = (wx**2).mean(axis=(2, 3)) - mx**2
    vy = (wy**2).mean(axis=(2, 3)) - my**2
    cov = (wx * wy).mean(axis=(2, 3)) - mx * my
    c1, c2 = params.c1, params.c2
    per_window = ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx**2 + my**2 + c1) * (vx + vy + c2))
    return float(per_window.mean())


# ---------------------------------------------------------------------------
# Classification performance


@dataclass(frozen=True)
class ConfusionTotals:
    """One-vs-rest confusion counts pooled across classes."""

    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @classmethod
    def from_predictions(cls, predicted: Sequence[int], labels: Sequence[int],
                         n_classes: int) -> "ConfusionTotals":
        if len(predicted) != len(labels):
            raise ValueError("one prediction per label required")
        n = len(labels)
        tp = sum(1 for p, t in zip(predicted, labels) if p == t)
        fp = n - tp  # single-label: every wrong prediction is one FP and one FN
        fn = n - tp
        tn = n * n_classes - tp - fp - fn
        return cls(tp=tp, fp=fp, tn=tn, fn=fn)

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denom if denom else 0.0


def top_n_accuracy(preds: Sequence[PredictionRecord], labels: Sequence[int], n: int) -> float:
    """Fraction of samples whose label is among the N highest probabilities.

    Ties are broken in favor of the lower class index.
    """
    hits = 0
    for pred, label in zip(preds, labels):
        order = np.lexsort((np.arange(pred.n_classes), -pred.probs))
        if label in order[:n]:
            hits += 1
    return hits / len(preds)


def _auc_from_scores(scores: np.ndarray, positive: np.ndarray) -> float:
    """AUC by average ranks; tied scores contribute one half."""
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC undefined with a single class")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    rank_sum = float(ranks[positive].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def performance_metrics(preds: Sequence[PredictionRecord], labels: Sequence[int],
                        top_n: int = 1) -> dict[str, float]:
    """Micro-averaged precision/recall/F1, top-N accuracy and micro AUC."""
    if not preds or len(preds) != len(labels):
        raise ValueError("need equal non-empty predictions and labels")
    n_classes = preds[0].n_classes
    if any(not 0 <= label < n_classes for label in labels):
        raise ValueError("labels must be valid class ids")
    totals = ConfusionTotals.from_predictions([p.top1_index for p in preds], labels, n_classes)
    scores = np.concatenate([p.probs for p in preds])
    positive = np.zeros(len(scores), dtype=bool)
    for i, label in enumerate(labels):
        positive[i * n_classes + label] = True
    return {
        "precision": totals.precision,
        "recall": totals.recall,
        "f1": totals.f1,
        "top_n_accuracy": top_n_accuracy(preds, labels, top_n),
        "auc_micro": _auc_from_scores(scores, positive),
    }


# ---------------------------------------------------------------------------
# Cost and effect size


def cost_overhead(c: CostRecord) -> dict[str, float]:
    """Share of time and energy attributable to explanation, in percent."""
    if c.t_ml + c.t_xai <= 0:
        raise UndefinedMetricError("time overhead undefined: zero total time")
    if c.e_ml + c.e_xai <= 0:
        raise UndefinedMetricError("energy overhead undefined: zero total energy")
    return {
        "r_time": c.t_xai / (c.t_ml + c.t_xai) * 100.0,
        "r_energy": c.e_xai / (c.e_ml + c.e_xai) * 100.0,
    }


def cliffs_delta(a: Sequence[float], b: Sequence[float]) -> float:
    """Cliff's delta effect size: P(a > b) - P(a < b) over all pairs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.sort(np.asarray(b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise ValueError("cliffs_delta needs two non-empty samples")
    greater = int(np.searchsorted(b, a, side="left").sum())
    less = int((b.size - np.searchsorted(b, a, side="right")).sum())
    return (greater - less) / (a.size * b.size)
