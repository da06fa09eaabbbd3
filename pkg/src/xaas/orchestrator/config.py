"""Pipeline configuration: parsing, validation, defaults.

The accepted JSON mirrors the service's configuration template: an
``xai_config`` block mapping dataset ids to a model and a list of
explainer algorithms, plus perturbation specs and the set of pipelines
to run.  Unset fields get documented defaults (all five pipelines, all
roles embedded, seed 2024).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import jsonschema

from ..core import PerturbationSpec, canonical_json, derive_seed, digest_json

PIPELINES = ("cost", "performance", "deviation", "robustness", "resilience")
ROLES = ("data", "model", "xai", "eval")
EMBEDDED = "embedded"


class ConfigError(ValueError):
    """Configuration rejected, with the offending field path."""

    def __init__(self, message: str, path: str = "<root>"):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class DatasetTask:
    dataset_id: str
    model_name: str
    algorithms: tuple[str, ...]


@dataclass(frozen=True)
class PipelineConfig:
    run_id: str | None
    seed: int
    services: dict[str, str]
    tasks: tuple[DatasetTask, ...]
    perturbations: tuple[PerturbationSpec, ...]
    pipelines: tuple[str, ...]
    top_n: int = 1
    parallel_width: int = 4
    watts: float = 25.0
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def digest(self) -> str:
        return digest_json(self.raw)


def _config_schema() -> dict:
    text = resources.files("xaas.orchestrator").joinpath("config_schema.json").read_text()
    return json.loads(text)


def load_and_validate(config_bytes: bytes | str | dict) -> PipelineConfig:
    """Parse, schema-validate and normalize a pipeline config.

    Returns the config with defaults applied; ``raw`` holds the
    normalized dict whose canonical digest identifies the run setup.
    """
    if isinstance(config_bytes, dict):
        doc = config_bytes
    else:
        try:
            doc = json.loads(config_bytes)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}")
    try:
        jsonschema.validate(doc, _config_schema())
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(exc.message, path)

    seed = int(doc.get("seed", 2024))
    services = {role: EMBEDDED for role in ROLES}
    base_url = doc.get("xai_config", {}).get("base_url")
    if base_url:  # single-address template form: the one URL hosts every role
        services = {role: base_url for role in ROLES}
    services.update(doc.get("services", {}))

    tasks = tuple(
        DatasetTask(dataset_id=ds_id, model_name=entry["model_name"],
                    algorithms=tuple(entry["algorithms"]))
        for ds_id, entry in doc["xai_config"]["datasets"].items()
    )

    perturbations: list[PerturbationSpec] = []
    for i, entry in enumerate(doc.get("perturbations", [])):
        kind = entry["kind"]
        severities = entry.get("severities")
        if severities is None:
            severities = [entry.get("severity", 0 if kind == "identity" else 1)]
        if "severity" in entry and "severities" in entry:
            raise ConfigError("give either severity or severities, not both",
                              f"perturbations/{i}")
        # one seed per kind keeps severity levels on correlated noise rays
        seed_value = entry.get("seed", derive_seed(seed, kind) % 2**31)
        for severity in severities:
            try:
                perturbations.append(PerturbationSpec(kind=kind, severity=severity,
                                                      seed=seed_value))
            except ValueError as exc:
                raise ConfigError(str(exc), f"perturbations/{i}")

    pipelines = tuple(doc.get("pipelines", PIPELINES))
    options = doc.get("options", {})

    # run_id is deliberately left out: a replay runs the same config
    # (same digest) under a fresh run id.
    normalized = {
        "seed": seed,
        "services": services,
        "xai_config": {"datasets": {
            t.dataset_id: {"model_name": t.model_name, "algorithms": list(t.algorithms)}
            for t in tasks}},
        "perturbations": [p.to_dict() for p in perturbations],
        "pipelines": list(pipelines),
        "options": {"top_n": int(options.get("top_n", 1)),
                    "parallel_width": int(options.get("parallel_width", 4)),
                    "watts": float(options.get("watts", 25.0))},
    }
    return PipelineConfig(
        run_id=doc.get("run_id"),
        seed=seed,
        services=services,
        tasks=tasks,
        perturbations=tuple(perturbations),
        pipelines=pipelines,
        top_n=normalized["options"]["top_n"],
        parallel_width=normalized["options"]["parallel_width"],
        watts=normalized["options"]["watts"],
        raw=normalized,
    )


def config_to_json(config: PipelineConfig) -> str:
    return canonical_json(config.raw)
