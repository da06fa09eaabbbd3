"""Canonical JSON encoding and content digests.

Every content address in the framework is the SHA-256 of the canonical
encoding defined here, so the rules must never change once runs exist:

* keys sorted lexicographically, no insignificant whitespace,
* floats rendered with Python's ``repr`` (shortest round-trip form,
  which ``json.dumps`` already uses),
* NaN/Infinity rejected rather than emitted as bare tokens.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any


def canonical_json(obj: Any) -> str:
    """Encode ``obj`` as canonical JSON text."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def digest_json(obj: Any) -> str:
    """SHA-256 hex digest of the canonical JSON encoding of ``obj``."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def digest_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


RUN_SCOPED_FIELDS = ("run_id", "uri")


def scrub_run_fields(payload: Any) -> Any:
    """Recursively drop run-scoped fields (run id, storage paths).

    Provenance digests are computed over scrubbed payloads so replaying
    a config under a fresh run id reproduces identical digests.
    """
    if isinstance(payload, dict):
        return {k: scrub_run_fields(v) for k, v in payload.items()
                if k not in RUN_SCOPED_FIELDS}
    if isinstance(payload, list):
        return [scrub_run_fields(v) for v in payload]
    return payload


def digest_scrubbed(payload: Any) -> str:
    return digest_json(scrub_run_fields(payload))
