"""Dataset persistence with content-addressed manifests.

Images are stored as raw little-endian float32 blobs (lossless, so
provenance replay is bit-exact); tabular data as RFC-4180 CSV with a
JSON schema sidecar describing column kinds and vocabularies.  Every
dataset directory carries a ``manifest.json``:

    { "id", "kind": "image"|"tabular", "count", "shape",
      "items": [{"file", "sha256"}], "labels": [...] (optional) }
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .canonical import canonical_json, digest_bytes, digest_json
from .types import Column, TabularMatrix, TensorImage

MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class ImageDataset:
    dataset_id: str
    images: tuple[TensorImage, ...]
    labels: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.labels is not None and len(self.labels) != len(self.images):
            raise ValueError("one label per image required")
        shapes = {img.shape for img in self.images}
        if len(shapes) > 1:
            raise ValueError(f"images must share one shape, got {sorted(shapes)}")

    @property
    def kind(self) -> str:
        return "image"

    def __len__(self) -> int:
        return len(self.images)


@dataclass(frozen=True)
class TabularDataset:
    dataset_id: str
    table: TabularMatrix
    labels: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.labels is not None and len(self.labels) != self.table.n_rows:
            raise ValueError("one label per row required")

    @property
    def kind(self) -> str:
        return "tabular"

    def __len__(self) -> int:
        return self.table.n_rows


Dataset = ImageDataset | TabularDataset


def _image_bytes(img: TensorImage) -> bytes:
    return np.ascontiguousarray(img.data, dtype="<f4").tobytes()


def build_files(ds: Dataset) -> tuple[dict, dict[str, bytes]]:
    """Render a dataset to (manifest, file bytes) without touching disk."""
    if isinstance(ds, ImageDataset):
        files = {f"item_{i:05d}.f32": _image_bytes(img) for i, img in enumerate(ds.images)}
        shape = list(ds.images[0].shape) if ds.images else None
        count = len(ds.images)
        kind = "image"
    else:
        table = ds.table
        buffer = io.StringIO()
        writer = csv.writer(buffer)
        writer.writerow([c.name for c in table.columns])
        for r in range(table.n_rows):
            writer.writerow([repr(float(vals[r])) if col.kind == "numeric" else str(vals[r])
                             for col, vals in zip(table.columns, table.values)])
        schema = {
            "columns": [
                {"name": c.name, "kind": c.kind,
                 **({"vocab": list(c.vocab)} if c.vocab else {})}
                for c in table.columns
            ]
        }
        files = {
            "data.csv": buffer.getvalue().encode(),
            "schema.json": (canonical_json(schema) + "\n").encode(),
        }
        shape = [table.n_rows, table.n_columns]
        count = table.n_rows
        kind = "tabular"
    manifest = {
        "id": ds.dataset_id,
        "kind": kind,
        "count": count,
        "shape": shape,
        "items": [{"file": name, "sha256": digest_bytes(blob)}
                  for name, blob in files.items()],
    }
    if ds.labels is not None:
        manifest["labels"] = list(ds.labels)
    return manifest, files


def save_dataset(ds: Dataset, dir_path: str | Path) -> dict:
    """Write a dataset directory and return its manifest."""
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    manifest, files = build_files(ds)
    for name, blob in files.items():
        (dir_path / name).write_bytes(blob)
    (dir_path / MANIFEST_NAME).write_text(canonical_json(manifest) + "\n")
    return manifest


def load_dataset(dir_path: str | Path) -> Dataset:
    """Load a dataset directory, verifying every item digest."""
    dir_path = Path(dir_path)
    manifest_path = dir_path / MANIFEST_NAME
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    for item in manifest["items"]:
        blob = (dir_path / item["file"]).read_bytes()
        if digest_bytes(blob) != item["sha256"]:
            raise ValueError(f"digest mismatch for {item['file']} in {dir_path}")
    labels = tuple(manifest["labels"]) if manifest.get("labels") is not None else None
    if manifest["kind"] == "image":
        shape = manifest["shape"]
        images = []
        for item in manifest["items"]:
            flat = np.frombuffer((dir_path / item["file"]).read_bytes(), dtype="<f4")
            images.append(TensorImage(flat.astype(np.float64).reshape(shape)))
        return ImageDataset(dataset_id=manifest["id"], images=tuple(images), labels=labels)
    if manifest["kind"] == "tabular":
        schema = json.loads((dir_path / "schema.json").read_text())
        columns = tuple(
            Column(c["name"], c["kind"], tuple(c["vocab"]) if "vocab" in c else None)
            for c in schema["columns"]
        )
        with open(dir_path / "data.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if header != [c.name for c in columns]:
            raise ValueError("CSV header does not match schema columns")
        values = []
        for j, col in enumerate(columns):
            cells = [row[j] for row in body]
            values.append(np.array([float(v) for v in cells]) if col.kind == "numeric"
                          else np.array(cells, dtype=object))
        table = TabularMatrix(columns=columns, values=tuple(values))
        return TabularDataset(dataset_id=manifest["id"], table=table, labels=labels)
    raise ValueError(f"unknown dataset kind {manifest['kind']!r}")


def dataset_content_digest(manifest: dict) -> str:
    """Digest over item digests, shape and labels; excludes the id.

    Two datasets with identical content but different ids share this
    value, which is what perturbation idempotence keys on.
    """
    return digest_json({
        "kind": manifest["kind"],
        "shape": manifest["shape"],
        "items": [it["sha256"] for it in manifest["items"]],
        "labels": manifest.get("labels"),
    })
