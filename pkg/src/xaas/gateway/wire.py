"""Wire encoding for bulk float payloads.

Masks and images travel as base64-encoded little-endian float32 with an
explicit shape, so any client language can produce and consume them
without a tensor library.
"""

from __future__ import annotations

import base64

import numpy as np

WIRE_DTYPE = "<f4"


def encode_array(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr, dtype=WIRE_DTYPE)
    return {
        "shape": list(arr.shape),
        "dtype": WIRE_DTYPE,
        "b64": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def decode_array(payload: dict) -> np.ndarray:
    if payload.get("dtype", WIRE_DTYPE) != WIRE_DTYPE:
        raise ValueError(f"unsupported wire dtype {payload.get('dtype')!r}")
    raw = base64.b64decode(payload["b64"])
    flat = np.frombuffer(raw, dtype=WIRE_DTYPE).astype(np.float64)
    expected = int(np.prod(payload["shape"])) if payload["shape"] else 1
    if flat.size != expected:
        raise ValueError(f"payload has {flat.size} values, shape implies {expected}")
    return flat.reshape(payload["shape"])
