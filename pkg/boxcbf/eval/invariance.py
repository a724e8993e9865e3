"""Forward-invariance audit of simulated traces."""
from __future__ import annotations
from dataclasses import replace
from typing import List, Optional, Sequence
import logging

import numpy as np
import pandas as pd

from .. import config
from ..errors import DivergenceError, RegionError
from ..models import InvarianceReport, OutputChannel, Scenario, SimTrace
from ..sim import simulate

logger = logging.getLogger(__name__)

__all__ = [
    "default_tolerance",
    "audit_invariance",
    "convergence_study",
]


def default_tolerance(dt: float) -> float:
    """Hold-induced violation is first order in dt."""
    return max(config.INVARIANCE_TOL_FLOOR, config.INVARIANCE_TOL_PER_DT * dt)


def audit_invariance(trace: SimTrace, channels: Optional[Sequence[OutputChannel]] = None,
                     tolerance: Optional[float] = None, levels: str = "all") -> InvarianceReport:
    """Minimum over time of every psi level, every h and every slack.

    levels="all" gates on psi_0..psi_{r-1} and the slacks; levels="outputs"
    gates on h (psi_0) and the slacks only. Complementarity of the logged
    multipliers is checked against COMPL_TOL at either level.
    """
    if levels not in ("all", "outputs"):
        raise ValueError(f"levels must be 'all' or 'outputs', got '{levels}'")
    if channels is not None and tuple(c.name for c in channels) != trace.channel_names:
        raise ValueError(f"channels {[c.name for c in channels]} do not match trace {list(trace.channel_names)}")
    tol = default_tolerance(trace.dt) if tolerance is None else float(tolerance)
    failures: List[str] = []
    min_lo, min_up = {}, {}
    for i, name in enumerate(trace.channel_names):
        lo, up = trace.psi_block(i)
        min_lo[name] = lo.min(axis=0) if lo.size else np.full(lo.shape[1], np.nan)
        min_up[name] = up.min(axis=0) if up.size else np.full(up.shape[1], np.nan)
        gated = 1 if levels == "outputs" else trace.rel_degrees[i]
        for side, mins in (("lower", min_lo[name]), ("upper", min_up[name])):
            for j in range(gated):
                if mins[j] < -tol:
                    failures.append(f"psi_{name}_{side}_{j} min {mins[j]:.3e} < -{tol:.1e}")

    h = trace.h_values()
    min_h = float(h.min()) if h.size else float("nan")
    min_slack = float(trace.slacks.min()) if trace.slacks.size else float("nan")
    if trace.slacks.size and min_slack < -tol:
        failures.append(f"constraint slack min {min_slack:.3e} < -{tol:.1e}")
    compl = 0.0
    if trace.lambdas.size:
        # lambda_j * slack_j vanishes at every logged decision
        compl = float(np.max(np.abs(trace.lambdas * trace.slacks) / (1.0 + trace.lambdas)))
        if compl > config.COMPL_TOL:
            failures.append(f"complementarity {compl:.3e} > {config.COMPL_TOL:.1e}")
    if not trace.complete:
        failures.append(f"trace incomplete ({trace.status}): {trace.message}")

    passed = not failures
    expected = trace.x0_outside_safe_set and not passed
    if expected:
        logger.warning("invariance audit of '%s' failed with x0 outside the safe set (expected)", trace.scenario)
    return InvarianceReport(
        scenario=trace.scenario,
        tolerance=tol,
        levels=levels,
        min_psi_lower=min_lo,
        min_psi_upper=min_up,
        min_h=min_h,
        min_slack=min_slack,
        passed=passed,
        failures=failures,
        expected_failure=expected,
        max_complementarity=compl,
    )


def convergence_study(scenario: Scenario, dts: Sequence[float] = (1e-2, 5e-3, 1e-3),
                      t_final: Optional[float] = None) -> pd.DataFrame:
    """Run one scenario at several step sizes and tabulate the minimum margins per dt."""
    rows = []
    for dt in dts:
        scn = replace(scenario, dt=float(dt), t_final=t_final if t_final is not None else scenario.t_final)
        try:
            trace = simulate(scn)
        except (RegionError, DivergenceError) as err:
            trace = err.trace
            if trace is None:
                raise
        min_psi = min(float(np.min(v)) for d in (trace.psi_block(i) for i in range(len(trace.channel_names)))
                      for v in d if v.size)
        rows.append({
            "dt": float(dt),
            "status": trace.status,
            "steps": trace.steps,
            "min_h": float(trace.h_values().min()),
            "min_slack": float(trace.slacks.min()),
            "min_psi": min_psi,
        })
    return pd.DataFrame(rows)
