"""Synthetic benchmark datasets for the reference model.

Each image is a grid of class-template blocks (derived from the model's
own weight rows) plus per-block jitter and per-pixel texture.  Jitter
spreads samples across the decision boundary so corruption severity
translates into measurable accuracy loss; texture gives blur and
pixelation something to destroy.  Labels are the reference model's
clean top-1 predictions, so clean accuracy is 1.0 by construction and
any drop is attributable to the perturbation under test.
"""

from __future__ import annotations

import numpy as np

from .core import (
    Column,
    ImageDataset,
    PortableRng,
    TabularDataset,
    TabularMatrix,
    TensorImage,
    derive_seed,
)
from .refmodel import LinearSoftmaxModel

IMAGE_SIZE = 36  # indivisible by the pixelate bin sizes, so every severity bites
DEFAULT_SEED = 2024


def synthetic_image_dataset(model: LinearSoftmaxModel, n: int = 64, *,
                            size: int = IMAGE_SIZE, seed: int = DEFAULT_SEED,
                            amp: float = 0.01, jitter: float = 0.01,
                            texture: float = 0.04,
                            dataset_id: str = "synthetic-images") -> ImageDataset:
    """Build ``n`` labeled images cycling through the model's classes."""
    grid = model.grid
    if size % grid:
        raise ValueError(f"size {size} must be divisible by the model grid {grid}")
    block = size // grid
    weights = model.weights.reshape(model.n_classes, grid, grid, 3)
    images, labels = [], []
    for i in range(n):
        k = i % model.n_classes
        rng = PortableRng(derive_seed(seed, "image", i))
        row = weights[k]
        template = 0.5 + amp * row / np.max(np.abs(row))
        wobble = jitter * (rng.uniforms(row.size).reshape(row.shape) - 0.5)
        blocks = np.clip(template + wobble, texture / 2, 1 - texture / 2)
        pixels = np.repeat(np.repeat(blocks, block, axis=0), block, axis=1)
        grain = texture * (rng.uniforms(pixels.size).reshape(pixels.shape) - 0.5)
        img = TensorImage(pixels + grain)
        images.append(img)
        labels.append(model.predict(img).top1_index)
    return ImageDataset(dataset_id=dataset_id, images=tuple(images), labels=tuple(labels))


TABULAR_COLUMNS = (
    Column("f0", "numeric"),
    Column("f1", "numeric"),
    Column("f2", "numeric"),
    Column("f3", "numeric"),
    Column("f4", "numeric"),
    Column("group", "categorical", vocab=("a", "b", "c")),
)


def synthetic_tabular_dataset(model: LinearSoftmaxModel, n: int = 96, *,
                              seed: int = DEFAULT_SEED, spread: float = 0.6,
                              dataset_id: str = "synthetic-tabular") -> TabularDataset:
    """Build ``n`` labeled rows around per-class centroids.

    The categorical column tracks the generating class; numeric columns
    are centroid + noise with the centroids taken from the model's own
    weight rows, mirroring the image construction.
    """
    n_numeric = len(TABULAR_COLUMNS) - 1
    centroids = model.weights[:, :n_numeric]
    centroids = centroids / np.max(np.abs(centroids))
    rows = np.empty((n, n_numeric))
    groups = []
    for i in range(n):
        k = i % model.n_classes
        rng = PortableRng(derive_seed(seed, "row", i))
        rows[i] = centroids[k] + spread * rng.normals(n_numeric)
        groups.append(TABULAR_COLUMNS[-1].vocab[k])
    values = tuple(rows[:, j] for j in range(n_numeric)) + (np.array(groups, dtype=object),)
    table = TabularMatrix(columns=TABULAR_COLUMNS, values=values)
    labels = tuple(model.predict(model.encode_row(table, r)).top1_index for r in range(n))
    return TabularDataset(dataset_id=dataset_id, table=table, labels=labels)
