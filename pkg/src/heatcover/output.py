"""CSV and JSON writers for run artifacts.

Floats are written with ``repr`` so repeated runs give byte-identical files.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .geometry import RegionGrid
from .mission import RunSummary

TABLE_ORDER = ("centralized", "algo1", "algo3")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _strided(rows: Sequence, stride: int, key=lambda r: r):
    """Every ``stride``-th sample plus the final one."""
    if not rows:
        return []
    keep = [r for n, r in enumerate(rows) if n % stride == 0]
    if keep[-1] is not rows[-1]:
        keep.append(rows[-1])
    return keep


def write_curve(path: Path, summary: RunSummary, stride: int = 1):
    header = ["t", "M_total"] + [f"M_agent_{i}" for i in range(summary.N)]
    rows = []
    for r in _strided(summary.M_curve, stride):
        rows.append(list(r) + [""] * (len(header) - len(r)))
    _write_rows(path, header, rows)


def write_trajectory(path: Path, summary: RunSummary, stride: int = 1):
    n = summary.N
    steps = [summary.trajectory[i:i + n] for i in range(0, len(summary.trajectory), n)]
    rows = [row for block in _strided(steps, stride) for row in block]
    _write_rows(path, ["t", "k", "agent", "x", "y", "mode", "speed"], rows)


def write_raster(path: Path, values: np.ndarray, defined: Optional[np.ndarray] = None, blank: str = ""):
    """Row-major raster, first row is the lowest y.  Undefined cells get ``blank``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for iy in range(values.shape[0]):
            w.writerow(
                [_fmt(v) if defined is None or defined[iy, ix] else blank for ix, v in enumerate(values[iy])]
            )


def write_labels(path: Path, labels: np.ndarray):
    """Integer partition raster, -1 outside the workspace."""
    write_raster(path, labels.astype(np.int64))


def read_raster(path: Path) -> list[list[str]]:
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def summary_dict(summary: RunSummary) -> dict:
    return {
        "algorithm": summary.algorithm,
        "completed": summary.completed,
        "stop_reason": summary.stop_reason,
        "T": summary.T,
        "T_star": summary.T_star,
        "delta_T": summary.delta_T,
        "M0": summary.M0,
        "M_final": summary.M_curve[-1][1] if summary.M_curve else None,
        "N": summary.N,
        "steps": summary.steps,
        "iterations": summary.iterations,
        "solver": summary.solver_stats,
        "accounting_error": summary.accounting_error,
        "events": [
            {"seq": seq, "t": t, "k": k, "kind": kind, **detail} for seq, t, k, kind, detail in summary.events
        ],
    }


def write_summary(path: Path, summary: RunSummary):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary_dict(summary), indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, (np.ndarray, tuple)):
        return list(o)
    raise TypeError(f"not serialisable: {type(o)}")


def write_artifacts(directory: Path, summary: RunSummary, region: RegionGrid, artifacts: Sequence[str], stride: int):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if "summary" in artifacts:
        write_summary(directory / "summary.json", summary)
    if "curve" in artifacts:
        write_curve(directory / "workload_curve.csv", summary, stride)
    if "trajectory" in artifacts:
        write_trajectory(directory / "trajectory.csv", summary, stride)
    if "partition" in artifacts:
        for k, labels in summary.partitions:
            write_labels(directory / f"partition_k{k:02d}.csv", labels)
    if "workload" in artifacts:
        write_raster(directory / "workload_initial.csv", summary.initial_workload, region.mask)
        write_raster(directory / "workload_final.csv", summary.final_workload, region.mask)
    if "fields" in artifacts:
        for k, agent, t, T in summary.snapshots:
            write_raster(directory / f"field_k{k:02d}_agent{agent}_t{t:.2f}.csv", T.values, T.cells)


def write_comparison(path: Path, summaries: dict):
    """Table-style comparison; all rows share a single T* computation."""
    T_star = next(iter(summaries.values())).T_star
    rows = []
    for name in TABLE_ORDER:
        if name in summaries:
            s = summaries[name]
            rows.append((name, s.T, s.T - T_star, T_star))
    _write_rows(path, ["method", "T", "delta_T", "T_star"], rows)
