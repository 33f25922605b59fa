"""Run-directory plumbing: incremental metrics CSV, manifest, summary.

The CSV is flushed row by row so an interrupted run leaves a valid prefix.
Floats are written with repr, which round-trips float64 bit-exactly and
makes equal runs byte-identical files.
"""

from __future__ import annotations

import csv
import json
import os
import platform
import sys
import time

import numpy as np

from .evaluation import MetricsRecord

METRICS_HEADER = ("step", "loss_v", "loss_c", "loss_r", "gan_g1", "gan_g2",
                  "loss_ac", "loss_av", "lr", "rho")

ENV_OUT_ROOT = "FACTORCYCLE_OUTDIR"


def out_root() -> str:
    return os.environ.get(ENV_OUT_ROOT, "runs")


def _fmt(x: float) -> str:
    return repr(float(x))


class MetricsWriter:
    """Append-only metrics.csv writer; one flushed row per training step."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w", newline="")
        self._fh.write(",".join(METRICS_HEADER) + "\n")
        self._fh.flush()

    def write(self, rec: MetricsRecord) -> None:
        row = [
            str(rec.step),
            _fmt(rec.loss_v),
            _fmt(rec.loss_c),
            _fmt(rec.loss_r),
            _fmt(rec.gan_g1),
            _fmt(rec.gan_g2),
            _fmt(rec.loss_ac),
            _fmt(rec.loss_av),
            _fmt(rec.lr),
            "" if rec.rho is None else _fmt(rec.rho),
        ]
        self._fh.write(",".join(row) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def read_metrics_csv(path) -> dict[str, np.ndarray]:
    """Columns of a metrics.csv; rho is NaN on rows where it was skipped."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != METRICS_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = list(reader)
    cols: dict[str, np.ndarray] = {}
    for j, name in enumerate(METRICS_HEADER):
        if name == "step":
            cols[name] = np.array([int(r[j]) for r in rows], dtype=np.int64)
        elif name == "rho":
            cols[name] = np.array(
                [float(r[j]) if r[j] else np.nan for r in rows]
            )
        else:
            cols[name] = np.array([float(r[j]) for r in rows])
    return cols


def _json_dump(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_manifest(run_dir, config_dict: dict, argv=None) -> str:
    """Reproduction record, written before the first training step."""
    from . import __version__

    manifest = {
        "config": config_dict,
        "argv": list(sys.argv if argv is None else argv),
        "started_unix": time.time(),
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "outputs": {
            "metrics": "metrics.csv",
            "summary": "summary.json",
            "checkpoint": "checkpoint.json",
        },
    }
    path = os.path.join(run_dir, "manifest.json")
    _json_dump(path, manifest)
    return path


def write_summary(run_dir, summary: dict) -> str:
    path = os.path.join(run_dir, "summary.json")
    _json_dump(path, summary)
    return path


def read_summary(run_dir) -> dict:
    with open(os.path.join(run_dir, "summary.json")) as fh:
        return json.load(fh)


def append_summary(run_dir, key: str, value) -> str:
    """Add one section to an existing summary (e.g. a probe report)."""
    path = os.path.join(run_dir, "summary.json")
    summary = {}
    if os.path.exists(path):
        with open(path) as fh:
            summary = json.load(fh)
    summary[key] = value
    _json_dump(path, summary)
    return path
