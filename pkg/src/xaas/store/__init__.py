"""Artifact persistence and provenance recording.

Layout under one store root:

    datasets/<dataset_id>/...                 registered dataset directories
    runs/<run_id>/provenance.json             ordered step log
    runs/<run_id>/index.json                  artifact index
    runs/<run_id>/artifacts/<kind>/<name>     write-once artifact bytes

Artifacts are write-once and digest-addressed; the provenance log is
flushed after every step so a crashed run is inspectable up to its last
completed step.  Wall-clock timings are recorded in the log but kept
out of every digest, so replay equality ignores timing.
"""

from __future__ import annotations

import fcntl
import json
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from ..core import canonical_json, digest_bytes, digest_json
from ..core.datasets import (
    Dataset,
    build_files,
    dataset_content_digest,
    load_dataset,
    save_dataset,
)

ARTIFACT_KINDS = ("dataset", "predictions", "masks", "summaries", "metrics", "report")


@dataclass(frozen=True)
class RunArtifact:
    run_id: str
    kind: str
    name: str
    uri: str
    digest: str

    def ref(self) -> dict:
        return {"run_id": self.run_id, "kind": self.kind, "name": self.name}


@dataclass
class Step:
    name: str
    role: str
    request_digest: str
    response_digest: str
    t_start: float
    t_end: float
    seconds: float
    energy_wh: float = 0.0
    deterministic: bool = True

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "Step":
        return cls(**d)


@dataclass
class ProvenanceLog:
    """Ordered step record for one run.

    Carries the full pipeline config so a run can be replayed from its
    provenance alone.
    """

    run_id: str
    config_digest: str
    config: dict | None = None
    status: str = "running"  # running | completed | failed
    steps: list[Step] = field(default_factory=list)
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "config_digest": self.config_digest,
            "config": self.config,
            "status": self.status,
            "error": self.error,
            "steps": [s.to_dict() for s in self.steps],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProvenanceLog":
        return cls(run_id=d["run_id"], config_digest=d["config_digest"],
                   config=d.get("config"), status=d["status"],
                   error=d.get("error"), steps=[Step.from_dict(s) for s in d["steps"]])


class DuplicateWriteError(ValueError):
    pass


class NotFoundError(KeyError):
    pass


class ArtifactStore:
    """Filesystem-backed store; single writer per run, any readers.

    The writer may be multi-threaded (bounded parallel pipeline steps),
    so index updates are serialized with an in-process lock.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._write_lock = threading.Lock()
        (self.root / "datasets").mkdir(parents=True, exist_ok=True)
        (self.root / "runs").mkdir(parents=True, exist_ok=True)

    # -- datasets ----------------------------------------------------------

    def dataset_dir(self, dataset_id: str) -> Path:
        return self.root / "datasets" / dataset_id

    def has_dataset(self, dataset_id: str) -> bool:
        return (self.dataset_dir(dataset_id) / "manifest.json").is_file()

    def register_dataset(self, ds: Dataset) -> dict:
        """Write a dataset directory; idempotent for identical content.

        Re-registering the same id with different content is an error,
        not a silent overwrite.
        """
        target = self.dataset_dir(ds.dataset_id)
        if self.has_dataset(ds.dataset_id):
            existing = json.loads((target / "manifest.json").read_text())
            offered, _ = build_files(ds)
            if dataset_content_digest(existing) != dataset_content_digest(offered):
                raise DuplicateWriteError(
                    f"dataset {ds.dataset_id!r} already registered with different content")
            return existing
        return save_dataset(ds, target)

    def load_dataset(self, dataset_id: str) -> Dataset:
        if not self.has_dataset(dataset_id):
            raise NotFoundError(f"dataset {dataset_id!r} not registered")
        return load_dataset(self.dataset_dir(dataset_id))

    def dataset_manifest(self, dataset_id: str) -> dict:
        if not self.has_dataset(dataset_id):
            raise NotFoundError(f"dataset {dataset_id!r} not registered")
        return json.loads((self.dataset_dir(dataset_id) / "manifest.json").read_text())

    # -- run artifacts -------------------------------------------------------

    def _run_dir(self, run_id: str) -> Path:
        return self.root / "runs" / run_id

    def _index_path(self, run_id: str) -> Path:
        return self._run_dir(run_id) / "index.json"

    def _load_index(self, run_id: str) -> dict:
        path = self._index_path(run_id)
        return json.loads(path.read_text()) if path.is_file() else {"artifacts": []}

    def put(self, run_id: str, kind: str, name: str, payload: bytes | dict | list) -> RunArtifact:
        """Store an artifact; a second write to the same key fails.

        JSON payloads are canonicalized before hashing so digests are
        stable across writers.
        """
        if kind not in ARTIFACT_KINDS:
            raise ValueError(f"unknown artifact kind {kind!r}")
        data = payload if isinstance(payload, bytes) else canonical_json(payload).encode()
        with self._write_lock, self._file_lock(run_id):
            path = self._run_dir(run_id) / "artifacts" / kind / name
            if path.exists():
                raise DuplicateWriteError(f"artifact {run_id}/{kind}/{name} already written")
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(data)
            artifact = RunArtifact(
                run_id=run_id, kind=kind, name=name,
                uri=str(path.relative_to(self.root)), digest=digest_bytes(data),
            )
            index = self._load_index(run_id)
            index["artifacts"].append(artifact.__dict__)
            self._index_path(run_id).write_text(canonical_json(index) + "\n")
        return artifact

    @contextmanager
    def _file_lock(self, run_id: str):
        """Advisory lock serializing index updates across processes.

        Co-hosted services and the coordinator may share one store root;
        the index read-modify-write must not interleave between them.
        """
        run_dir = self._run_dir(run_id)
        run_dir.mkdir(parents=True, exist_ok=True)
        with open(run_dir / ".lock", "w") as handle:
            try:
                fcntl.flock(handle.fileno(), fcntl.LOCK_EX)
                yield
            finally:
                fcntl.flock(handle.fileno(), fcntl.LOCK_UN)

    def get(self, run_id: str, kind: str, name: str) -> bytes:
        path = self._run_dir(run_id) / "artifacts" / kind / name
        if not path.is_file():
            raise NotFoundError(f"artifact {run_id}/{kind}/{name} not found")
        return path.read_bytes()

    def get_json(self, run_id: str, kind: str, name: str):
        return json.loads(self.get(run_id, kind, name))

    def get_artifact(self, run_id: str, kind: str, name: str) -> RunArtifact:
        for entry in self._load_index(run_id)["artifacts"]:
            if entry["kind"] == kind and entry["name"] == name:
                return RunArtifact(**entry)
        raise NotFoundError(f"artifact {run_id}/{kind}/{name} not indexed")

    def list_artifacts(self, run_id: str, kind: str | None = None) -> list[RunArtifact]:
        entries = [RunArtifact(**e) for e in self._load_index(run_id)["artifacts"]]
        return [e for e in entries if kind is None or e.kind == kind]

    def list_runs(self) -> list[str]:
        return sorted(p.name for p in (self.root / "runs").iterdir() if p.is_dir())

    # -- provenance ----------------------------------------------------------

    def _provenance_path(self, run_id: str) -> Path:
        return self._run_dir(run_id) / "provenance.json"

    def open_run(self, run_id: str, config_digest: str,
                 config: dict | None = None) -> ProvenanceLog:
        path = self._provenance_path(run_id)
        if path.exists():
            raise DuplicateWriteError(f"run {run_id!r} already exists")
        log = ProvenanceLog(run_id=run_id, config_digest=config_digest, config=config)
        self._flush(log)
        return log

    def append_step(self, log: ProvenanceLog, step: Step) -> ProvenanceLog:
        """Append one step and flush before returning.

        Steps must arrive in t_start order; an earlier timestamp than
        the last recorded step is rejected.
        """
        if log.status != "running":
            raise ValueError(f"run {log.run_id!r} is closed ({log.status})")
        if log.steps and step.t_start < log.steps[-1].t_start:
            raise ValueError("step t_start precedes the previous step")
        log.steps.append(step)
        self._flush(log)
        return log

    def close_run(self, log: ProvenanceLog, status: str, error: str | None = None):
        if status not in ("completed", "failed"):
            raise ValueError(f"invalid final status {status!r}")
        log.status = status
        log.error = error
        self._flush(log)

    def _flush(self, log: ProvenanceLog):
        path = self._provenance_path(log.run_id)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(log.to_dict(), indent=2) + "\n")
        tmp.replace(path)

    def load_provenance(self, run_id: str) -> ProvenanceLog:
        path = self._provenance_path(run_id)
        if not path.is_file():
            raise NotFoundError(f"no provenance for run {run_id!r}")
        return ProvenanceLog.from_dict(json.loads(path.read_text()))


def replay_check(reference: ProvenanceLog, fresh: ProvenanceLog) -> dict:
    """Compare two runs of the same config, step by step.

    Steps are matched by name (names are unique per run; bounded
    parallelism may reorder appends within a dependency wave).  Returns
    ``{"config_digest", "matches", "mismatches", "rows"}`` where each
    row reports one step as ``match``, ``mismatch`` (with the differing
    digest side), ``missing`` (absent from the fresh run), ``extra``,
    or ``nondeterministic`` (timing-bearing steps, excluded from the
    verdict).
    """
    if reference.config_digest != fresh.config_digest:
        raise ValueError("replay_check requires identical config digests")
    rows = []
    matches = mismatches = 0
    fresh_by_name = {s.name: s for s in fresh.steps}
    for ref_step in reference.steps:
        new = fresh_by_name.pop(ref_step.name, None)
        if new is None:
            rows.append({"step": ref_step.name, "status": "missing"})
            mismatches += 1
            continue
        if not ref_step.deterministic:
            rows.append({"step": ref_step.name, "status": "nondeterministic"})
            continue
        diffs = [f for f in ("request_digest", "response_digest")
                 if getattr(ref_step, f) != getattr(new, f)]
        if diffs:
            rows.append({"step": ref_step.name, "status": "mismatch", "field": diffs[0],
                         "reference": getattr(ref_step, diffs[0]),
                         "fresh": getattr(new, diffs[0])})
            mismatches += 1
        else:
            rows.append({"step": ref_step.name, "status": "match"})
            matches += 1
    for leftover in fresh_by_name.values():
        rows.append({"step": leftover.name, "status": "extra"})
        mismatches += 1
    return {
        "config_digest": reference.config_digest,
        "matches": matches,
        "mismatches": mismatches,
        "rows": rows,
    }
