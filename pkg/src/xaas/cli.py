"""Operator command line.

Exit codes are stable and documented: 0 success, 1 run/step failure,
2 configuration error, 3 service unreachable, 4 unknown run or missing
input.  With ``--porcelain`` the commands emit machine-parseable JSON
lines on stdout instead of human-oriented text.
"""

from __future__ import annotations

import csv as csv_mod
import io
import json
import os
import sys
from pathlib import Path

import click

from .core import PerturbationSpec, canonical_json
from .core.datasets import load_dataset, save_dataset
from .gateway import ServiceEndpointConfig
from .gateway import serve as gateway_serve
from .orchestrator import (
    ConfigError,
    Orchestrator,
    StepFailure,
    build_clients,
    load_and_validate,
    normalize_for_radar,
    plan,
)
from .perturb import apply as perturb_apply
from .store import ArtifactStore, NotFoundError, replay_check

EXIT_OK = 0
EXIT_RUN_FAILED = 1
EXIT_CONFIG = 2
EXIT_UNREACHABLE = 3
EXIT_UNKNOWN_RUN = 4


def _emit(porcelain: bool, payload: dict, human: str):
    if porcelain:
        click.echo(canonical_json(payload))
    else:
        click.echo(human)


def _store(store_dir: str | None) -> ArtifactStore:
    return ArtifactStore(store_dir or os.environ.get("XAAS_STORE", "xaas-store"))


@click.group()
def main():
    """Quality-attribute assessment pipelines for AI models."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "store_dir", default=None, help="Store directory (default $XAAS_STORE).")
@click.option("--run-id", default=None, help="Override the run id.")
@click.option("--porcelain", is_flag=True)
def run(config_path, store_dir, run_id, porcelain):
    """Execute the configured pipelines and write the report."""
    try:
        config = load_and_validate(Path(config_path).read_bytes())
    except ConfigError as exc:
        _emit(porcelain, {"event": "config_error", "error": str(exc)},
              f"configuration error: {exc}")
        sys.exit(EXIT_CONFIG)
    store = _store(store_dir)
    clients = build_clients(config.services, store)
    orch = Orchestrator(store, clients, parallel_width=config.parallel_width)
    try:
        orch.check_services()
        orch.validate_references(config)
    except StepFailure as exc:
        _emit(porcelain, {"event": "unreachable", "error": str(exc)},
              f"service unreachable: {exc}")
        sys.exit(EXIT_UNREACHABLE)
    except ValueError as exc:
        _emit(porcelain, {"event": "config_error", "error": str(exc)},
              f"configuration error: {exc}")
        sys.exit(EXIT_CONFIG)
    result = orch.execute(plan(config), config, run_id=run_id)
    if result.log.status != "completed":
        _emit(porcelain, {"event": "run_failed", "run_id": result.run_id,
                          "error": result.log.error},
              f"run {result.run_id} failed: {result.log.error}")
        sys.exit(EXIT_RUN_FAILED)
    _emit(porcelain, {"event": "run_completed", "run_id": result.run_id,
                      "rows": len(result.report["rows"])},
          f"run {result.run_id} completed: {len(result.report['rows'])} report rows")


@main.command()
@click.option("--role", required=True,
              type=click.Choice(["data", "model", "xai", "eval", "all"]))
@click.option("--port", default=8000, type=int)
@click.option("--host", default="127.0.0.1")
@click.option("--store", "store_dir", default=None)
def serve(role, port, host, store_dir):
    """Serve one role (or all roles) over HTTP."""
    store_path = store_dir or os.environ.get("XAAS_STORE", "xaas-store")
    gateway_serve(ServiceEndpointConfig(role=role, host=host, port=port,
                                        store_path=store_path))


def _flat_rows(report: dict) -> list[dict]:
    out = []
    for row in report["rows"]:
        flat = {
            "model": row["model"],
            "algorithm": row["algorithm"],
            "dataset_id": row["dataset_id"],
            "perturbation": row["perturbation"],
        }
        m = row["metrics"]
        for key in ("precision", "recall", "f1", "top_n_accuracy", "auc_micro"):
            flat[key] = m.get("performance", {}).get(key)
        flat["deviation"] = m.get("deviation")
        flat["ks"] = m.get("ks")
        flat["resilience"] = m.get("resilience")
        for key in ("t_ml", "t_xai", "t_eval", "e_ml", "e_xai", "r_time", "r_energy"):
            flat[key] = m.get("cost", {}).get(key)
        out.append(flat)
    return out


def _heatmap(report: dict) -> dict:
    """Median prediction-change grid: one minus the deviation values."""
    cells = []
    for row in report["rows"]:
        if row["metrics"].get("deviation") is None:
            continue
        cells.append({
            "model": row["model"],
            "perturbation": row["perturbation"],
            "algorithm": row["algorithm"],
            "median_prediction_change": 1.0 - row["metrics"]["deviation"],
        })
    return {"cells": cells}


@main.command()
@click.option("--run", "run_id", required=True)
@click.option("--format", "fmt", default="json",
              type=click.Choice(["json", "csv", "radar", "heatmap"]))
@click.option("--store", "store_dir", default=None)
@click.option("--porcelain", is_flag=True)
def report(run_id, fmt, store_dir, porcelain):
    """Emit plot-ready report data for a finished run."""
    store = _store(store_dir)
    try:
        report_doc = store.get_json(run_id, "report", "report")
    except NotFoundError:
        _emit(porcelain, {"event": "unknown_run", "run_id": run_id},
              f"no report for run {run_id!r}")
        sys.exit(EXIT_UNKNOWN_RUN)
    if fmt == "json":
        click.echo(json.dumps(report_doc, indent=2, sort_keys=True))
    elif fmt == "radar":
        radar = normalize_for_radar(report_doc)
        if radar.get("warning") and not porcelain:
            click.echo(f"warning: {radar['warning']}", err=True)
        click.echo(json.dumps(radar, indent=2, sort_keys=True))
    elif fmt == "heatmap":
        click.echo(json.dumps(_heatmap(report_doc), indent=2, sort_keys=True))
    else:
        rows = _flat_rows(report_doc)
        buf = io.StringIO()
        writer = csv_mod.DictWriter(buf, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
        click.echo(buf.getvalue().rstrip("\n"))


@main.command()
@click.option("--run", "run_id", required=True)
@click.option("--store", "store_dir", default=None)
@click.option("--porcelain", is_flag=True)
def replay(run_id, store_dir, porcelain):
    """Re-execute a run from its provenance and diff step digests."""
    store = _store(store_dir)
    try:
        reference = store.load_provenance(run_id)
    except NotFoundError:
        _emit(porcelain, {"event": "unknown_run", "run_id": run_id},
              f"no provenance for run {run_id!r}")
        sys.exit(EXIT_UNKNOWN_RUN)
    if reference.config is None:
        _emit(porcelain, {"event": "unknown_run", "run_id": run_id},
              f"run {run_id!r} has no embedded config to replay")
        sys.exit(EXIT_UNKNOWN_RUN)
    config = load_and_validate(reference.config)
    suffix = 1
    while f"{run_id}-replay-{suffix}" in store.list_runs():
        suffix += 1
    fresh_id = f"{run_id}-replay-{suffix}"
    clients = build_clients(config.services, store)
    orch = Orchestrator(store, clients, parallel_width=config.parallel_width)
    result = orch.execute(plan(config), config, run_id=fresh_id)
    if result.log.status != "completed":
        _emit(porcelain, {"event": "run_failed", "run_id": fresh_id,
                          "error": result.log.error},
              f"replay run {fresh_id} failed: {result.log.error}")
        sys.exit(EXIT_RUN_FAILED)
    outcome = replay_check(reference, result.log)
    if porcelain:
        click.echo(canonical_json({"event": "replay", "run_id": run_id,
                                   "fresh_run_id": fresh_id, **outcome}))
    else:
        click.echo(f"replayed {run_id} as {fresh_id}: "
                   f"{outcome['matches']} matching, {outcome['mismatches']} mismatching")
        for row in outcome["rows"]:
            if row["status"] not in ("match", "nondeterministic"):
                click.echo(f"  {row['status']:>10}  {row['step']}")
    sys.exit(EXIT_OK if outcome["mismatches"] == 0 else EXIT_RUN_FAILED)


@main.command()
@click.option("--in", "manifest_dir", required=True, type=click.Path(exists=True),
              help="Dataset directory containing manifest.json.")
@click.option("--kind", required=True,
              type=click.Choice(["gaussian_noise", "defocus_blur", "pixelate",
                                 "tabular_noise", "identity"]))
@click.option("--severity", default=1, type=click.IntRange(0, 3))
@click.option("--seed", default=0, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path())
def perturb(manifest_dir, kind, severity, seed, out_dir):
    """Perturb a serialized dataset into a new dataset directory."""
    dataset = load_dataset(manifest_dir)
    try:
        spec = PerturbationSpec(kind=kind, severity=severity, seed=seed)
        perturbed = perturb_apply(spec, dataset)
    except ValueError as exc:
        click.echo(f"invalid perturbation: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    manifest = save_dataset(perturbed, out_dir)
    click.echo(f"wrote {manifest['count']} items to {out_dir} (id {manifest['id']})")


@main.command("import-images")
@click.argument("src", type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--id", "dataset_id", required=True)
@click.option("--labels", "labels_path", default=None, type=click.Path(exists=True),
              help="Optional file with one integer label per line.")
def import_images(src, out_dir, dataset_id, labels_path):
    """Convert a directory of PNG files into a float32 dataset."""
    try:
        from PIL import Image
    except ImportError:
        click.echo("PNG import requires Pillow", err=True)
        sys.exit(EXIT_CONFIG)
    import numpy as np

    from .core import ImageDataset, TensorImage

    paths = sorted(Path(src).glob("*.png"))
    if not paths:
        click.echo(f"no PNG files under {src}", err=True)
        sys.exit(EXIT_UNKNOWN_RUN)
    images = []
    for path in paths:
        arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
        images.append(TensorImage(arr))
    labels = None
    if labels_path:
        labels = tuple(int(line) for line in Path(labels_path).read_text().split())
    manifest = save_dataset(ImageDataset(dataset_id, tuple(images), labels), out_dir)
    click.echo(f"imported {manifest['count']} images into {out_dir}")


if __name__ == "__main__":
    main()
