"""Run artifacts: trace.csv, audit.txt and plot.gp.

Writes are atomic (temp file then rename) so an interrupted run never leaves a
half-written artifact behind.
"""
from __future__ import annotations
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence
import tempfile

import numpy as np
import pandas as pd

from . import config
from .models import InvarianceReport, IssReport, OutputChannel, SimTrace

__all__ = [
    "trace_columns",
    "trace_frame",
    "write_trace_csv",
    "format_audit",
    "write_audit_txt",
    "plot_script",
    "write_plot_gp",
]


def _atomic_write(path: Path, data: bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.NamedTemporaryFile(dir=path.parent, delete=False) as tmp:
        tmp.write(data)
        tmp_path = Path(tmp.name)
    tmp_path.replace(path)


def trace_columns(trace: SimTrace) -> List[str]:
    ch = trace.channel_names
    cols = ["t"]
    cols += [f"x_{s}" for s in trace.state_names]
    cols += [f"y_{c}" for c in ch]
    cols += [f"u_{u}" for u in trace.input_names]
    cols += [f"kcbf_{u}" for u in trace.input_names]
    cols += [f"slack_{c}_{side}" for c in ch for side in ("lower", "upper")]
    cols += trace.psi_columns()
    cols += [f"lambda_{c}_{side}" for c in ch for side in ("lower", "upper")]
    cols += [f"err_{c}" for c in ch]
    cols += [f"applied_{u}" for u in trace.applied_input_names]
    return cols


def trace_frame(trace: SimTrace, decimate: int = 1) -> pd.DataFrame:
    """One row per logged step; `u_` columns hold the filtered command the slacks refer to.

    Adapter-actuated runs append the plant input actually applied as `applied_` columns.
    """
    if decimate < 1:
        raise ValueError(f"decimate must be >= 1, got {decimate}")
    data = np.column_stack([
        trace.t, trace.states, trace.outputs, trace.u_star, trace.k_cbf,
        trace.slacks, trace.psi, trace.lambdas, trace.errors,
    ] + ([trace.u] if trace.applied_input_names else []))
    return pd.DataFrame(data[::decimate], columns=trace_columns(trace))


def write_trace_csv(trace: SimTrace, path: Path, decimate: int = 1) -> Path:
    text = trace_frame(trace, decimate).to_csv(index=False, float_format=config.CSV_FLOAT_FORMAT,
                                               lineterminator="\n")
    _atomic_write(Path(path), text.encode("utf-8"))
    return Path(path)


def _fmt(v: Any) -> str:
    if isinstance(v, np.ndarray):
        return "[" + ", ".join(f"{x:.6e}" for x in v) + "]"
    if isinstance(v, float):
        return f"{v:.6e}"
    return str(v)


def format_audit(trace: SimTrace, report: InvarianceReport, stats: Dict[str, Any],
                 compatibility: Optional[Dict[str, Any]] = None,
                 iss: Optional[IssReport] = None) -> str:
    lines = [
        f"scenario: {trace.scenario}",
        f"status: {trace.status}" + (f" ({trace.message})" if trace.message else ""),
        f"rows: {trace.steps}",
        f"dt: {trace.dt:g}",
        f"x0 in safe set: {'no (hypothesis violated)' if trace.x0_outside_safe_set else 'yes'}",
        "",
        "[invariance]",
        f"result: {'PASS' if report.passed else 'FAIL'}"
        + (" (expected: x0 outside safe set)" if report.expected_failure else ""),
        f"levels: {report.levels}",
        f"tolerance: {report.tolerance:.3e}",
        f"min h: {report.min_h:.6e}",
        f"min slack: {report.min_slack:.6e}",
        f"max complementarity: {report.max_complementarity:.3e}",
    ]
    for name in trace.channel_names:
        lines.append(f"min psi {name} lower: {_fmt(report.min_psi_lower[name])}")
        lines.append(f"min psi {name} upper: {_fmt(report.min_psi_upper[name])}")
    for f in report.failures:
        lines.append(f"failure: {f}")
    lines += ["", "[active set]"]
    lines += [f"{k}: {_fmt(v)}" for k, v in stats.items()]
    if compatibility is not None:
        lines += ["", "[compatibility]"]
        lines += [f"{k}: {_fmt(v)}" for k, v in compatibility.items()]
    if iss is not None:
        lines += [
            "", "[tracking bound]",
            f"result: {'PASS' if iss.passed else 'FAIL'}",
            f"segments: {iss.segments}",
            f"max violation: {iss.max_violation:.6e}",
            f"max |e|: {iss.max_error:.6e}",
            f"bounded: {iss.bounded} (max |e| <= max |y| + max |y_d| = {iss.max_output + iss.max_target:.6e})",
        ]
    return "\n".join(lines) + "\n"


def write_audit_txt(path: Path, text: str) -> Path:
    _atomic_write(Path(path), text.encode("utf-8"))
    return Path(path)


def plot_script(trace: SimTrace, channels: Sequence[OutputChannel], csv_name: str = "trace.csv") -> str:
    """gnuplot 3x2 panels: outputs with bounds, inputs, h values, constraint slacks, multipliers."""
    def series(cols: Sequence[str]) -> str:
        return ", \\\n     ".join(f"'{csv_name}' using \"t\":\"{c}\" with lines title \"{c}\"" for c in cols)

    bounds = []
    for ch in channels:
        bounds.append(f"{ch.lower!r} with lines dashtype 2 title \"{ch.name} lower\"")
        bounds.append(f"{ch.upper!r} with lines dashtype 2 title \"{ch.name} upper\"")
    h_cols = [f"psi_{c}_{side}_0" for c in trace.channel_names for side in ("lower", "upper")]
    slack_cols = [f"slack_{c}_{side}" for c in trace.channel_names for side in ("lower", "upper")]
    lam_cols = [f"lambda_{c}_{side}" for c in trace.channel_names for side in ("lower", "upper")]
    return "\n".join([
        f"# {trace.scenario}",
        "set datafile separator \",\"",
        "set datafile columnheaders",
        "set terminal pngcairo size 1200,1300",
        "set output 'plot.png'",
        "set multiplot layout 3,2",
        "set xlabel \"t [s]\"",
        "set title \"outputs\"",
        "plot " + series([f"y_{c}" for c in trace.channel_names]) + ", \\\n     " + ", \\\n     ".join(bounds),
        "set title \"filtered inputs\"",
        "plot " + series([f"u_{u}" for u in trace.input_names]),
        "set title \"constraint values h\"",
        "plot " + series(h_cols),
        "set title \"constraint slacks\"",
        "plot " + series(slack_cols),
        "set title \"multipliers\"",
        "plot " + series(lam_cols),
        "unset multiplot",
        "",
    ])


def write_plot_gp(trace: SimTrace, channels: Sequence[OutputChannel], path: Path) -> Path:
    _atomic_write(Path(path), plot_script(trace, channels).encode("utf-8"))
    return Path(path)
