"""Shared domain types, canonical serialization and deterministic RNG."""

from .canonical import (
    canonical_json,
    digest_bytes,
    digest_json,
    digest_scrubbed,
    scrub_run_fields,
)
from .datasets import (
    Dataset,
    ImageDataset,
    TabularDataset,
    dataset_content_digest,
    load_dataset,
    save_dataset,
)
from .rng import PortableRng, derive_seed
from .types import (
    Column,
    CostRecord,
    ExplanationSummary,
    PerturbationSpec,
    PredictionRecord,
    SaliencyMask,
    TabularMatrix,
    TensorImage,
    softmax,
)

__all__ = [
    "canonical_json",
    "digest_bytes",
    "digest_json",
    "digest_scrubbed",
    "scrub_run_fields",
    "Dataset",
    "ImageDataset",
    "TabularDataset",
    "dataset_content_digest",
    "load_dataset",
    "save_dataset",
    "PortableRng",
    "derive_seed",
    "Column",
    "CostRecord",
    "ExplanationSummary",
    "PerturbationSpec",
    "PredictionRecord",
    "SaliencyMask",
    "TabularMatrix",
    "TensorImage",
    "softmax",
]
