"""Wire-format helpers, implemented against the published contract.

Bulk floats travel as base64 little-endian float32 with an explicit
shape; prediction records carry logits, softmax probabilities and the
top-1 class.  Kept dependency-free of the primary's internals: only the
documented JSON shapes matter here.
"""

from __future__ import annotations

import base64

import numpy as np


def encode_array(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    return {"shape": list(arr.shape), "dtype": "<f4",
            "b64": base64.b64encode(arr.tobytes()).decode("ascii")}


def decode_array(payload: dict) -> np.ndarray:
    if payload.get("dtype", "<f4") != "<f4":
        raise ValueError(f"unsupported dtype {payload.get('dtype')!r}")
    flat = np.frombuffer(base64.b64decode(payload["b64"]), dtype="<f4")
    return flat.astype(np.float64).reshape(payload["shape"])


def prediction_record(logits: np.ndarray) -> dict:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max()
    probs = np.exp(shifted)
    probs /= probs.sum()
    top1 = int(np.argmax(probs))
    return {
        "logits": [float(v) for v in logits],
        "probs": [float(v) for v in probs],
        "top1_index": top1,
        "top1_prob": float(probs[top1]),
    }
