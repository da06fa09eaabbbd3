"""Corruption kernels for robustness testing.

Three image corruption families (additive Gaussian noise, defocus blur,
pixelation) and one tabular family (scaled feature noise), each at three
severity levels with strictly monotone parameters.  All kernels are pure
functions; stochastic ones take an injected generator so datasets can be
re-created bit-exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..core import (
    ImageDataset,
    PerturbationSpec,
    PortableRng,
    TabularDataset,
    TabularMatrix,
    TensorImage,
    derive_seed,
    digest_json,
)
from ..core.datasets import Dataset

logger = logging.getLogger(__name__)

SEVERITIES = (1, 2, 3)


@dataclass(frozen=True)
class SeverityTable:
    """Per-kind corruption parameters, indexed by severity level 1..3.

    Parameters must be strictly monotone in severity: larger noise sigma,
    larger blur radius, coarser (smaller) pixelation fraction, larger
    tabular noise scale.
    """

    noise_sigma: dict[int, float] = field(
        default_factory=lambda: {1: 0.08, 2: 0.12, 3: 0.18})
    blur_radius: dict[int, int] = field(
        default_factory=lambda: {1: 3, 2: 5, 3: 7})
    pixelate_fraction: dict[int, float] = field(
        default_factory=lambda: {1: 0.6, 2: 0.5, 3: 0.4})
    tabular_scale: dict[int, float] = field(
        default_factory=lambda: {1: 0.05, 2: 0.10, 3: 0.20})

    def __post_init__(self):
        for name, table, increasing in (
            ("noise_sigma", self.noise_sigma, True),
            ("blur_radius", self.blur_radius, True),
            ("pixelate_fraction", self.pixelate_fraction, False),
            ("tabular_scale", self.tabular_scale, True),
        ):
            if sorted(table) != list(SEVERITIES):
                raise ValueError(f"{name} must cover severities {SEVERITIES}")
            vals = [table[s] for s in SEVERITIES]
            ordered = all(a < b for a, b in zip(vals, vals[1:])) if increasing \
                else all(a > b for a, b in zip(vals, vals[1:]))
            if not ordered:
                raise ValueError(f"{name} must be strictly monotone in severity: {vals}")


DEFAULT_SEVERITY_TABLE = SeverityTable()


def _check_severity(severity: int):
    if severity not in SEVERITIES:
        raise ValueError(f"severity must be one of {SEVERITIES}, got {severity}")


def gaussian_noise(img: TensorImage, severity: int, rng: PortableRng, *,
                   sigma: float | None = None,
                   table: SeverityTable = DEFAULT_SEVERITY_TABLE) -> TensorImage:
    """Additive zero-mean Gaussian noise, clamped back to [0, 1].

    Draws are row-major over (y, x, channel).  ``sigma`` overrides the
    severity table (test hook).
    """
    if sigma is None:
        _check_severity(severity)
        sigma = table.noise_sigma[severity]
    noise = rng.normals(img.data.size).reshape(img.shape)
    return TensorImage(img.data + sigma * noise)


def _disk_kernel(radius: int) -> np.ndarray:
    span = np.arange(-radius, radius + 1)
    yy, xx = np.meshgrid(span, span, indexing="ij")
    kernel = (yy**2 + xx**2 <= radius**2).astype(np.float64)
    return kernel / kernel.sum()


def defocus_blur(img: TensorImage, severity: int, *,
                 radius: int | None = None,
                 table: SeverityTable = DEFAULT_SEVERITY_TABLE) -> TensorImage:
    """Convolution with a normalized disk kernel, reflect padding.

    Reflection is about the edge pixel without duplicating it
    (numpy ``pad(mode="reflect")``).
    """
    if radius is None:
        _check_severity(severity)
        radius = table.blur_radius[severity]
    h, w, _ = img.shape
    if h < 2 * radius + 1 or w < 2 * radius + 1:
        raise ValueError(f"image {h}x{w} smaller than blur kernel {2 * radius + 1}")
    kernel = _disk_kernel(radius)
    padded = np.pad(img.data, ((radius, radius), (radius, radius), (0, 0)), mode="reflect")
    out = np.zeros_like(img.data)
    for dy in range(2 * radius + 1):
        for dx in range(2 * radius + 1):
            weight = kernel[dy, dx]
            if weight:
                out += weight * padded[dy:dy + h, dx:dx + w, :]
    return TensorImage(out)


def pixelate(img: TensorImage, severity: int, *,
             fraction: float | None = None,
             table: SeverityTable = DEFAULT_SEVERITY_TABLE) -> TensorImage:
    """Box-average downscale to ``fraction`` of the size, nearest upscale.

    Pixels are binned by ``floor(index * small / big)``, which makes the
    round trip a projection: applying the same severity twice is a no-op
    (up to float summation error when re-averaging a bin of identical
    values whose size is not a power of two).
    """
    if fraction is None:
        _check_severity(severity)
        fraction = table.pixelate_fraction[severity]
    h, w, c = img.shape
    small_h, small_w = int(round(h * fraction)), int(round(w * fraction))
    if small_h < 1 or small_w < 1:
        raise ValueError(f"fraction {fraction} collapses {h}x{w} to zero size")
    bins_y = (np.arange(h) * small_h) // h
    bins_x = (np.arange(w) * small_w) // w
    small = np.zeros((small_h, small_w, c))
    counts = np.zeros((small_h, small_w, 1))
    np.add.at(small, (bins_y[:, None], bins_x[None, :]), img.data)
    np.add.at(counts, (bins_y[:, None], bins_x[None, :]), 1.0)
    small /= counts
    return TensorImage(small[bins_y[:, None], bins_x[None, :], :])


def tabular_noise(tab: TabularMatrix, severity: int, rng: PortableRng, *,
                  scale: float | None = None,
                  table: SeverityTable = DEFAULT_SEVERITY_TABLE) -> TabularMatrix:
    """Add N(0, (scale * column std)^2) noise to numeric cells.

    Column stds (population) are computed on the input.  Zero-variance
    columns are left untouched with a warning; categorical columns are
    never modified.  Draws are column-major in declared column order.
    """
    if scale is None:
        _check_severity(severity)
        scale = table.tabular_scale[severity]
    if not any(c.kind == "numeric" for c in tab.columns):
        raise ValueError("tabular noise needs at least one numeric column")
    new_values = []
    for col, vals in zip(tab.columns, tab.values):
        if col.kind != "numeric":
            new_values.append(vals)
            continue
        std = float(np.std(vals))
        if std == 0.0:
            logger.warning("column %r has zero variance; left unperturbed", col.name)
            new_values.append(vals)
            continue
        noise = rng.normals(len(vals))
        new_values.append(vals + scale * std * noise)
    return TabularMatrix(columns=tab.columns, values=tuple(new_values))


def perturbed_dataset_id(source_id: str, spec: PerturbationSpec) -> str:
    return digest_json({"source": source_id, "spec": spec.to_dict()})[:16]


def apply(spec: PerturbationSpec, dataset: Dataset, *,
          table: SeverityTable = DEFAULT_SEVERITY_TABLE) -> Dataset:
    """Perturb a whole dataset deterministically.

    Image items get independent per-item seeds derived from the spec seed
    and the item index, so item-level work can be fanned out in any order
    without changing the result.  Labels carry through unchanged.
    """
    new_id = perturbed_dataset_id(dataset.dataset_id, spec)
    if spec.kind == "identity":
        if isinstance(dataset, ImageDataset):
            return ImageDataset(new_id, dataset.images, dataset.labels)
        return TabularDataset(new_id, dataset.table, dataset.labels)
    if spec.kind == "tabular_noise":
        if not isinstance(dataset, TabularDataset):
            raise ValueError("tabular_noise requires a tabular dataset")
        rng = PortableRng(derive_seed(spec.seed, 0))
        return TabularDataset(new_id, tabular_noise(dataset.table, spec.severity, rng, table=table),
                              dataset.labels)
    if not isinstance(dataset, ImageDataset):
        raise ValueError(f"{spec.kind} requires an image dataset")
    images = []
    for index, img in enumerate(dataset.images):
        if spec.kind == "gaussian_noise":
            rng = PortableRng(derive_seed(spec.seed, index))
            images.append(gaussian_noise(img, spec.severity, rng, table=table))
        elif spec.kind == "defocus_blur":
            images.append(defocus_blur(img, spec.severity, table=table))
        elif spec.kind == "pixelate":
            images.append(pixelate(img, spec.severity, table=table))
        else:  # unreachable: spec kinds validated at construction
            raise ValueError(f"unhandled kind {spec.kind!r}")
    return ImageDataset(new_id, tuple(images), dataset.labels)
