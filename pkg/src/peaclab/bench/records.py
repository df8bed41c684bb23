"""Run records: JSON-lines metrics, decimal-text checkpoints, and the
per-run manifest used for resuming.

Layout of one run directory::

    <out>/<run_id>/record.json        manifest (config, stages, wall-clock)
    <out>/<run_id>/metrics.jsonl      append-only metric rows
    <out>/<run_id>/checkpoints/*.txt  decimal-text tensors

Metric rows never hold wall-clock time, so reruns produce identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .. import __version__

CHECKPOINT_HEADER = "# peaclab checkpoint v1"


def code_hash(version: str = __version__) -> str:
    """Git-style blob hash of the code version string."""
    data = f"peaclab {version}".encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def run_id(snapshot: dict) -> str:
    blob = json.dumps(snapshot, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _fmt(x) -> str:
    return repr(float(x)) if not isinstance(x, (int, np.integer)) else str(int(x))


def save_checkpoint(path, tensors: dict) -> None:
    """Write tensors as decimal text; floats use ``repr`` so they round-trip
    exactly."""
    lines = [CHECKPOINT_HEADER]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        dtype = "int64" if np.issubdtype(arr.dtype, np.integer) else "float64"
        lines.append(f"tensor {name} {dtype} {' '.join(str(d) for d in arr.shape)}".rstrip())
        flat = arr.reshape(-1)
        if dtype == "int64":
            lines.append(" ".join(str(int(v)) for v in flat))
        else:
            lines.append(" ".join(repr(float(v)) for v in flat))
    _atomic_write(path, "\n".join(lines) + "\n")


def load_checkpoint(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CHECKPOINT_HEADER:
        raise ValueError(f"{path} is not a checkpoint file")
    out = {}
    i = 1
    while i < len(lines):
        head = lines[i].split()
        if len(head) < 3 or head[0] != "tensor":
            raise ValueError(f"{path}:{i + 1}: malformed tensor header")
        name, dtype, shape = head[1], head[2], tuple(int(d) for d in head[3:])
        body = lines[i + 1].split() if i + 1 < len(lines) else []
        kind = np.int64 if dtype == "int64" else np.float64
        values = np.array([kind(v) if kind is np.int64 else float(v) for v in body], dtype=kind)
        if values.size != int(np.prod(shape)):
            raise ValueError(f"{path}:{i + 2}: expected {int(np.prod(shape))} values, got {values.size}")
        out[name] = values.reshape(shape)
        i += 2
    return out


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


class RunRecord:
    """Manifest plus metric log of one run.

    Stages are committed whole: their metric rows are appended and the
    manifest updated only after the stage finishes, so an interrupted run
    resumes from the last committed stage.
    """

    def __init__(self, root, snapshot: dict):
        self.snapshot = snapshot
        self.run_id = run_id(snapshot)
        self.dir = Path(root) / self.run_id
        self.metrics_path = self.dir / "metrics.jsonl"
        self.manifest_path = self.dir / "record.json"
        self.manifest = {
            "run_id": self.run_id,
            "code_hash": code_hash(),
            "config": snapshot,
            "stages": {},
            "wall_clock": {},
        }

    @classmethod
    def open(cls, root, snapshot: dict) -> "RunRecord":
        rec = cls(root, snapshot)
        if rec.manifest_path.exists():
            with open(rec.manifest_path, encoding="utf-8") as fh:
                stored = json.load(fh)
            if stored.get("config") != snapshot:
                raise ValueError(f"{rec.manifest_path} belongs to a different configuration")
            rec.manifest = stored
        return rec

    def done(self, stage: str) -> bool:
        return stage in self.manifest["stages"]

    def checkpoint_path(self, stage: str) -> Path:
        return self.dir / "checkpoints" / f"{stage}.txt"

    def commit(self, stage: str, rows, tensors: dict | None = None, seconds: float = 0.0,
               extra: dict | None = None) -> None:
        if self.done(stage):
            raise ValueError(f"stage {stage} already committed; records are append-only")
        (self.dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        entry = {"checkpoint": None}
        if tensors is not None:
            path = self.checkpoint_path(stage)
            save_checkpoint(path, tensors)
            entry["checkpoint"] = str(path.relative_to(self.dir))
        if extra:
            entry.update(extra)
        with open(self.metrics_path, "a", encoding="utf-8") as fh:
            for row in rows:
                out = {"run_id": self.run_id, "stage": stage, "step": int(row["step"]),
                       "metric": row["metric"], "value": float(row["value"])}
                fh.write(json.dumps(out, sort_keys=True) + "\n")
        self.manifest["stages"][stage] = entry
        self.manifest["wall_clock"][stage] = round(float(seconds), 6)
        _atomic_write(self.manifest_path, json.dumps(self.manifest, sort_keys=True, indent=1) + "\n")

    def stage_info(self, stage: str) -> dict:
        return self.manifest["stages"][stage]

    def rows(self, stage: str | None = None) -> list:
        if not self.metrics_path.exists():
            return []
        with open(self.metrics_path, encoding="utf-8") as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
        return rows if stage is None else [r for r in rows if r["stage"] == stage]


def read_metrics(run_dir) -> list:
    path = Path(run_dir) / "metrics.jsonl"
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
