"""Adapter exposing hosted vision models and CAM explainers over the
assessment service's wire contract."""

from .app import create_adapter_app, list_methods, self_test, serve_adapter
from .bindings import DEFAULT_BINDINGS, AdapterModelBinding

__all__ = [
    "create_adapter_app",
    "list_methods",
    "self_test",
    "serve_adapter",
    "DEFAULT_BINDINGS",
    "AdapterModelBinding",
]
