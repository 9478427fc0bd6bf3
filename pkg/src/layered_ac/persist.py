"""CSV, npz and manifest helpers with deterministic output."""
from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np


class DependencyError(RuntimeError):
    """An upstream stage output is missing or was produced from a different configuration."""


def file_hash(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def write_array_csv(path, header, array):
    array = np.asarray(array, dtype=float)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        np.savetxt(fh, array, delimiter=",", fmt="%.17g")
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [row for row in r]
    return header, rows


def read_array_csv(path):
    header, rows = read_csv(path)
    return header, np.array([[float(v) for v in row] for row in rows]).reshape(len(rows), len(header))


def save_npz(path, **arrays):
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_npz(path):
    with np.load(path, allow_pickle=False) as data:
        return {k: data[k] for k in data.files}


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


@dataclass
class StageManifest:
    """Per-stage record of input hash, output files with their hashes, summary scalars and timing."""

    out_dir: str
    stages: dict = field(default_factory=dict)

    @property
    def path(self):
        return os.path.join(self.out_dir, "manifest.json")

    @classmethod
    def load(cls, out_dir):
        m = cls(out_dir)
        if os.path.exists(m.path):
            with open(m.path) as fh:
                m.stages = json.load(fh).get("stages", {})
        return m

    def save(self):
        os.makedirs(self.out_dir, exist_ok=True)
        write_json(self.path, {"stages": self.stages})

    def record(self, name, input_hash, outputs, summary, wall_clock, upstream=None):
        files = {}
        for f in outputs:
            files[os.path.basename(f)] = file_hash(f)
        self.stages[name] = {
            "input_hash": input_hash,
            "outputs": files,
            "summary": _jsonable(summary),
            "wall_clock": float(wall_clock),
            "upstream": upstream or {},
        }
        self.save()

    def require(self, name, input_hash):
        """Check that stage ``name`` ran with ``input_hash`` and its outputs are intact."""
        st = self.stages.get(name)
        if st is None:
            raise DependencyError(f"stage '{name}' has not been run in {self.out_dir}")
        if st["input_hash"] != input_hash:
            raise DependencyError(f"stage '{name}' output is stale for the current configuration; re-run it")
        for fname, h in st["outputs"].items():
            path = os.path.join(self.out_dir, fname)
            if not os.path.exists(path):
                raise DependencyError(f"output {fname} of stage '{name}' is missing")
            if file_hash(path) != h:
                raise DependencyError(f"output {fname} of stage '{name}' was modified")
        return st

    def output(self, name):
        return os.path.join(self.out_dir, name)

    def all_outputs_exist(self):
        return all(os.path.exists(os.path.join(self.out_dir, f)) for st in self.stages.values()
                   for f in st["outputs"])


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        return False
