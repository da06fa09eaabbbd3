"""Coordination center: config parsing, planning, execution, reporting."""

from .config import ConfigError, DatasetTask, PipelineConfig, load_and_validate
from .execute import (
    BUILTIN_DATASETS,
    ExecutionResult,
    NominalPowerMeter,
    Orchestrator,
    StepFailure,
    build_clients,
)
from .plan import PipelinePlan, PlanStep, masked_dataset_id, plan
from .radar import normalize_for_radar

__all__ = [
    "ConfigError",
    "DatasetTask",
    "PipelineConfig",
    "load_and_validate",
    "BUILTIN_DATASETS",
    "ExecutionResult",
    "NominalPowerMeter",
    "Orchestrator",
    "StepFailure",
    "build_clients",
    "PipelinePlan",
    "PlanStep",
    "masked_dataset_id",
    "plan",
    "normalize_for_radar",
]
