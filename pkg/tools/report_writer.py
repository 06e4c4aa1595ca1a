# tubegrid/tools/report_writer.py
"""
Artifact emission for simulation runs: trajectory CSV, JSON and text
reports, and plain two-column plot data per series.
"""

import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from tools.metrics_collector import format_text_report

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("t", "node", "v_d", "v_q", "v_rms", "z_d", "z_q",
               "sigma_d", "sigma_q", "e_norm", "b", "dP", "dQ")
FLOAT_FORMAT = "%.17g"

TRAJECTORY_CSV = "trajectory.csv"
REPORT_JSON = "sim_report.json"
REPORT_TEXT = "sim_summary.txt"
PLOT_DIR = "plot_data"


def _fmt(x: float) -> str:
    return FLOAT_FORMAT % x


def write_json(data: Dict[str, Any], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with open(path, "w") as f:
            json.dump(data, f, indent=2)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    logger.info(f"💾 Saved {path}")
    return path


def write_text(text: str, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    logger.info(f"💾 Saved {path}")
    return path


def write_trajectory_csv(trajectory, path: Path, stride: int = 1) -> int:
    """
    One row per (time, node), nodes numbered from 1; returns the row count.

    Column order is CSV_COLUMNS. An empty trajectory gives the header only.
    """
    if stride < 1:
        raise ValueError(f"output stride must be >= 1, got {stride}")
    path.parent.mkdir(parents=True, exist_ok=True)
    n = trajectory.node_count
    rows = 0
    try:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            if trajectory.length:
                idx = np.arange(0, trajectory.length, stride)
                v = trajectory.v[idx]
                z = trajectory.z[idx]
                vr = trajectory.v_rms[idx]
                sd = trajectory.sigma_d[idx]
                sq = trajectory.sigma_q[idx]
                en = trajectory.e_norm[idx]
                b = trajectory.b[idx]
                dP = trajectory.dP[idx]
                dQ = trajectory.dQ[idx]
                for k, t in enumerate(trajectory.times[idx]):
                    for i in range(n):
                        w.writerow([_fmt(t), i + 1, _fmt(v[k, i]), _fmt(v[k, n + i]), _fmt(vr[k, i]),
                                    _fmt(z[k, i]), _fmt(z[k, n + i]), _fmt(sd[k, i]), _fmt(sq[k, i]),
                                    _fmt(en[k, i]), _fmt(b[k, i]), _fmt(dP[k, i]), _fmt(dQ[k, i])])
                        rows += 1
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    logger.info(f"💾 Saved {path} ({rows} rows)")
    return rows


def _series(path: Path, t: np.ndarray, y: np.ndarray) -> Path:
    np.savetxt(path, np.column_stack([t, y]), fmt=FLOAT_FORMAT)
    return path


def write_plot_data(trajectory, model, directory: Path, stride: int = 1) -> List[Path]:
    """
    Two-column (t, value) text files per node and series: RMS voltage with
    the constraint band, sigma_d, load deviations and barrier values.
    """
    directory.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []
    idx = np.arange(0, trajectory.length, stride)
    t = trajectory.times[idx]
    n = trajectory.node_count
    lower = model.center - model.constraint
    upper = model.center + model.constraint
    v_rms = trajectory.v_rms[idx]
    sigma_d = trajectory.sigma_d[idx]
    b = trajectory.b[idx]
    for i in range(n):
        node = i + 1
        written.append(_series(directory / f"voltage_node{node}.dat", t, v_rms[:, i]))
        written.append(_series(directory / f"voltage_lower_node{node}.dat", t, np.full(t.shape, lower[i])))
        written.append(_series(directory / f"voltage_upper_node{node}.dat", t, np.full(t.shape, upper[i])))
        written.append(_series(directory / f"sigma_d_node{node}.dat", t, sigma_d[:, i]))
        written.append(_series(directory / f"dP_node{node}.dat", t, trajectory.dP[idx, i]))
        written.append(_series(directory / f"dQ_node{node}.dat", t, trajectory.dQ[idx, i]))
        written.append(_series(directory / f"barrier_node{node}.dat", t, b[:, i]))
    logger.info(f"💾 Saved {len(written)} plot-data files to {directory}")
    return written


def emit_outputs(trajectory, report: Dict[str, Any], out_dir, model=None, stride: int = 1,
                 extra: Optional[Dict[str, Dict[str, Any]]] = None) -> Dict[str, Any]:
    """Write the full artifact set for one run and return the written paths"""
    out_dir = Path(out_dir)
    files: Dict[str, Any] = {
        "csv": str(out_dir / TRAJECTORY_CSV),
        "json": str(write_json(report, out_dir / REPORT_JSON)),
        "text": str(write_text(format_text_report(report), out_dir / REPORT_TEXT)),
    }
    write_trajectory_csv(trajectory, out_dir / TRAJECTORY_CSV, stride)
    if model is not None:
        files["plot_data"] = [str(p) for p in write_plot_data(trajectory, model, out_dir / PLOT_DIR, stride)]
    for name, data in (extra or {}).items():
        files[name] = str(write_json(data, out_dir / f"{name}.json"))
    return files
