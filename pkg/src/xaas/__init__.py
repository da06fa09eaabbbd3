"""xaas: quality-attribute assessment pipelines for AI models."""

__version__ = "0.1.0"
