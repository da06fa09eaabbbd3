"""Published wire-contract schemas and validation helpers.

The JSON Schema files under ``schemas/`` are the normative contract for
every service role; external adapters must produce and consume bodies
that validate against them.
"""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

import jsonschema
from referencing import Registry, Resource

SCHEMA_URN_PREFIX = "urn:xaas:schema:"


@lru_cache(maxsize=1)
def load_schemas() -> dict[str, dict]:
    out = {}
    for entry in resources.files("xaas.gateway.schemas").iterdir():
        if entry.name.endswith(".json"):
            out[entry.name[:-5]] = json.loads(entry.read_text())
    return out


@lru_cache(maxsize=1)
def _registry() -> Registry:
    registry = Registry()
    for schema in load_schemas().values():
        registry = Resource.from_contents(schema) @ registry
    return registry


def validate(payload: object, schema_name: str) -> None:
    """Raise ``jsonschema.ValidationError`` if payload breaks the contract."""
    schemas = load_schemas()
    if schema_name not in schemas:
        raise KeyError(f"unknown schema {schema_name!r}")
    validator = jsonschema.Draft202012Validator(schemas[schema_name], registry=_registry())
    validator.validate(payload)


def is_valid(payload: object, schema_name: str) -> bool:
    try:
        validate(payload, schema_name)
        return True
    except jsonschema.ValidationError:
        return False
