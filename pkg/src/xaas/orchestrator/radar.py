"""Radar-chart normalization of report attributes.

Every attribute is min-max scaled per model set so 1 is always "best":
benefit attributes (performance, deviation) keep their direction, while
cost-like attributes (cost, robustness, resilience — all smaller-is-
better) are inverted after scaling.  Ties across models map to 1 for
everyone; a single-model report degenerates to all ones with a warning.
"""

from __future__ import annotations

BENEFIT_ATTRIBUTES = ("performance", "deviation")
COST_LIKE_ATTRIBUTES = ("cost", "robustness", "resilience")


def normalize_for_radar(report: dict) -> dict:
    attributes: dict[str, dict[str, float]] = report.get("summary", {}).get("attributes", {})
    if not attributes:
        raise ValueError("report has no attribute summary to normalize")
    models = sorted(attributes)
    names = sorted({name for per_model in attributes.values() for name in per_model})
    warning = None
    if len(models) < 2:
        warning = "single-model report: min-max normalization is degenerate, all values set to 1"

    normalized: dict[str, dict[str, float]] = {m: {} for m in models}
    for name in names:
        values = {m: attributes[m][name] for m in models if name in attributes[m]}
        lo, hi = min(values.values()), max(values.values())
        for model, value in values.items():
            if len(values) < 2 or hi == lo:
                scaled = 1.0  # ties should not penalize anyone
            else:
                scaled = (value - lo) / (hi - lo)
                if name in COST_LIKE_ATTRIBUTES:
                    scaled = 1.0 - scaled
            normalized[model][name] = scaled
    out = {"models": normalized, "attributes": names}
    if warning:
        out["warning"] = warning
    return out
