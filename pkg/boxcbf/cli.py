"""Command-line front end.

    boxcbf simulate <cfg> [--out DIR] [--decimate K] [--seed S]
    boxcbf compare-qp --model NAME -n N [--seed S] [--progress]
    boxcbf verify-reldeg --model NAME -n N [--margin M] [--include-boundary]

Exit codes: 0 success, 1 verification/audit failure or aborted run,
2 usage, configuration or sampling error.
"""
from __future__ import annotations
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Sequence
import argparse
import logging
import sys

import numpy as np

from . import config
from .ecbf import compatibility_certificate, verify_relative_degree
from .errors import (
    BoxCbfError,
    ChannelConfigError,
    DivergenceError,
    InvalidCertificateError,
    RegionError,
    SamplingError,
    ScenarioParseError,
)
from .eval.benchmark import run_equivalence_benchmark
from .eval.invariance import audit_invariance
from .eval.iss import check_iss_bound, pd_tracking_certificate
from .eval.metrics import active_set_statistics
from .models import PlanarDroneParams, SimTrace
from .output import format_audit, write_audit_txt, write_plot_gp, write_trace_csv
from .scenario import load_scenario
from .sim import ClosedLoop, build_closed_loop, simulate
from .systems import DOUBLE_INTEGRATOR, DRONE_WITH_ROM, MODEL_NAMES, resolve_models, sample_states

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2

# compare-qp gates
MAX_REL_DEVIATION = 1e-7
MAX_KKT_RESIDUAL = 1e-8
MAX_GRAM_DEVIATION = 1e-10
MAX_PAIR_SUM_ERROR = 1e-10

COMPAT_SAMPLES = 50
COMPAT_TRIALS = 10

__all__ = [
    "RunConfig",
    "resolve_seed",
    "cmd_simulate",
    "cmd_compare_qp",
    "cmd_verify_reldeg",
    "main",
]


@dataclass
class RunConfig:
    command: str
    scenario: Optional[Path] = None
    out: Optional[Path] = None
    seed: Optional[int] = None
    decimate: int = 1
    model: Optional[str] = None
    n: int = 0
    margin: Optional[float] = None
    include_boundary: bool = False
    progress: bool = False


def resolve_seed(flag: Optional[int], scenario_seed: Optional[int] = None) -> int:
    """--seed, then BOXCBF_SEED, then the scenario's seed."""
    if flag is not None:
        return flag
    env = config.seed_override()
    if env is not None:
        return env
    return scenario_seed if scenario_seed is not None else config.DEFAULT_SEED


def _err(msg: str) -> None:
    print(f"boxcbf: {msg}", file=sys.stderr)


# ----------------------- simulate ------------------------------

def _sample_compatibility(loop: ClosedLoop, trace: SimTrace, seed: int) -> Dict[str, Any]:
    rng = np.random.default_rng(seed)
    every = max(1, trace.steps // COMPAT_SAMPLES)
    checked = failures = 0
    worst_identity = 0.0
    min_slack = float("inf")
    for k in range(0, trace.steps, every):
        rep = compatibility_certificate(loop.channels, loop.project(trace.states[k]), COMPAT_TRIALS, rng=rng)
        checked += 1
        failures += int(not rep.passed)
        worst_identity = max(worst_identity, rep.worst_identity_error)
        min_slack = min(min_slack, rep.min_feasible_slack)
    return {"states_checked": checked, "every": every, "trials": COMPAT_TRIALS, "seed": seed,
            "failures": failures, "worst_identity_error": worst_identity, "min_feasible_slack": min_slack}


def cmd_simulate(cfg: RunConfig) -> int:
    try:
        scenario = load_scenario(cfg.scenario)
        loop = build_closed_loop(scenario)
    except (ScenarioParseError, ChannelConfigError) as err:
        _err(str(err))
        return EXIT_USAGE
    seed = resolve_seed(cfg.seed, scenario.seed)

    aborted = None
    try:
        trace = simulate(scenario, loop)
    except (RegionError, DivergenceError) as err:
        aborted = err
        trace = err.trace
        if trace is None:
            _err(str(err))
            return EXIT_FAIL

    report = audit_invariance(trace, loop.monitored, tolerance=scenario.audit.tolerance,
                              levels=scenario.audit.levels)
    stats = active_set_statistics(trace)
    compat = _sample_compatibility(loop, trace, seed) if trace.steps else None
    iss = None
    if scenario.model == DOUBLE_INTEGRATOR and trace.steps:
        try:
            cert = pd_tracking_certificate(loop.filter_model, loop.target_outputs,
                                           kp=scenario.nominal.kp, kd=scenario.nominal.kd)
            iss = check_iss_bound(trace, cert)
        except InvalidCertificateError as err:
            _err(str(err))
            return EXIT_FAIL

    out = Path(cfg.out) if cfg.out else config.OUTPUT_DIR / scenario.name
    csv_path = write_trace_csv(trace, out / "trace.csv", decimate=cfg.decimate)
    write_audit_txt(out / "audit.txt", format_audit(trace, report, stats, compat, iss))
    write_plot_gp(trace, loop.monitored, out / "plot.gp")

    print(f"scenario {scenario.name}: {trace.steps} rows -> {csv_path}")
    print(f"invariance: {'PASS' if report.passed else 'FAIL'} "
          f"(min h {report.min_h:.3e}, min slack {report.min_slack:.3e}, tol {report.tolerance:.1e})")
    print(f"active set: max {stats['max_active']}, both-sides events {stats['both_sides_events']}, "
          f"two-positive intervals {stats['two_positive_intervals']}")
    if iss is not None:
        print(f"tracking bound: {'PASS' if iss.passed else 'FAIL'} (max violation {iss.max_violation:.3e})")
    if aborted is not None:
        _err(str(aborted))
        return EXIT_FAIL

    ok = report.passed and (compat is None or compat["failures"] == 0) and (iss is None or (iss.passed and iss.bounded))
    return EXIT_OK if ok else EXIT_FAIL


# ----------------------- compare-qp ----------------------------

def cmd_compare_qp(cfg: RunConfig) -> int:
    if cfg.n <= 0:
        _err(f"sample count must be positive, got {cfg.n}")
        return EXIT_USAGE
    model = DOUBLE_INTEGRATOR if cfg.model == DRONE_WITH_ROM else cfg.model
    seed = resolve_seed(cfg.seed)
    try:
        result = run_equivalence_benchmark(model, cfg.n, seed=seed, use_tqdm=cfg.progress)
    except SamplingError as err:
        _err(str(err))
        return EXIT_USAGE
    agg = result["aggregate_metrics"]
    print(f"compare-qp {model}: {agg['samples']} samples, seed {seed}, {agg['benchmark_time_seconds']:.2f}s")
    print(f"  max relative deviation   {agg['max_deviation']:.3e}")
    print(f"  worst KKT (closed form)  {agg['worst_kkt_closed_form']:.3e}")
    print(f"  worst KKT (oracle)       {agg['worst_kkt_oracle']:.3e}")
    print(f"  max Gram deviation       {agg['max_gram_deviation']:.3e}")
    print(f"  max pair-sum error       {agg['max_pair_sum_error']:.3e}")
    print(f"  case (iv) / both sides   {agg['case_iv_count']} / {agg['both_sides_events']}")
    print(f"  max active constraints   {agg['max_active']}")
    ok = (agg["max_deviation"] <= MAX_REL_DEVIATION
          and agg["worst_kkt_closed_form"] <= MAX_KKT_RESIDUAL
          and agg["worst_kkt_oracle"] <= MAX_KKT_RESIDUAL
          and agg["max_gram_deviation"] <= MAX_GRAM_DEVIATION
          and agg["max_pair_sum_error"] <= MAX_PAIR_SUM_ERROR
          and agg["case_iv_count"] == 0
          and agg["both_sides_events"] == 0)
    return EXIT_OK if ok else EXIT_FAIL


# ----------------------- verify-reldeg -------------------------

def cmd_verify_reldeg(cfg: RunConfig) -> int:
    if cfg.n <= 0:
        _err(f"sample count must be positive, got {cfg.n}")
        return EXIT_USAGE
    try:
        params = PlanarDroneParams() if cfg.margin is None else PlanarDroneParams(theta_margin=cfg.margin)
        plant, filter_model = resolve_models(cfg.model, params)
    except ChannelConfigError as err:
        _err(str(err))
        return EXIT_USAGE
    rng = np.random.default_rng(resolve_seed(cfg.seed))
    models = [plant] if plant is filter_model else [plant, filter_model]

    ok = True
    for model in models:
        try:
            samples = sample_states(model, rng, cfg.n, include_boundary=cfg.include_boundary)
        except SamplingError as err:
            _err(str(err))
            return EXIT_USAGE
        if cfg.progress:
            try:  # pragma: no cover - optional dependency
                from tqdm.auto import tqdm  # type: ignore
                samples = list(tqdm(samples, desc=f"verify-reldeg {model.name}"))
            except Exception:
                pass
        report = verify_relative_degree(model, samples)
        failed = report.failures
        print(f"verify-reldeg {model.name}: {len(report.samples) - len(failed)}/{len(report.samples)} samples pass")
        for f in failed[:5]:
            print(f"  sample {f.index}: {f.worst_kind} - {f.detail} at x={np.array2string(f.state, precision=4)}")
        if len(failed) > 5:
            print(f"  ... {len(failed) - 5} more")
        ok = ok and report.passed
    return EXIT_OK if ok else EXIT_FAIL


# ----------------------- entry point ---------------------------

def _parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(prog="boxcbf",
                                     description="Closed-form multi-ECBF safety filters for box-constrained outputs.")
    parser.add_argument("--version", action="version", version=f"boxcbf {config.VERSION}")
    parser.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="library log level")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a scenario and write trace.csv, audit.txt, plot.gp")
    sim.add_argument("scenario", type=Path)
    sim.add_argument("--out", type=Path, default=None, help="output directory (default runs/<name>)")
    sim.add_argument("--decimate", type=int, default=1, help="write every K-th row")
    sim.add_argument("--seed", type=int, default=None)

    cmp_ = sub.add_parser("compare-qp", help="closed form versus brute-force oracle")
    cmp_.add_argument("--model", required=True, choices=MODEL_NAMES)
    cmp_.add_argument("-n", type=int, required=True)
    cmp_.add_argument("--seed", type=int, default=None)
    cmp_.add_argument("--progress", action="store_true")

    rel = sub.add_parser("verify-reldeg", help="numeric relative-degree audit")
    rel.add_argument("--model", required=True, choices=MODEL_NAMES)
    rel.add_argument("-n", type=int, default=1000)
    rel.add_argument("--seed", type=int, default=None)
    rel.add_argument("--margin", type=float, default=None, help="drone attitude margin (rad)")
    rel.add_argument("--include-boundary", action="store_true",
                     help="pin some samples to the edge of the valid region")
    rel.add_argument("--progress", action="store_true")

    args = parser.parse_args(argv)
    if args.command == "simulate" and args.decimate < 1:
        parser.error("--decimate must be >= 1")
    if args.command in ("compare-qp", "verify-reldeg") and args.n <= 0:
        parser.error(f"-n must be positive, got {args.n}")
    return args


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = _parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    cfg = RunConfig(
        command=args.command,
        scenario=getattr(args, "scenario", None),
        out=getattr(args, "out", None),
        seed=args.seed,
        decimate=getattr(args, "decimate", 1),
        model=getattr(args, "model", None),
        n=getattr(args, "n", 0),
        margin=getattr(args, "margin", None),
        include_boundary=getattr(args, "include_boundary", False),
        progress=getattr(args, "progress", False),
    )
    handlers = {"simulate": cmd_simulate, "compare-qp": cmd_compare_qp, "verify-reldeg": cmd_verify_reldeg}
    try:
        return handlers[cfg.command](cfg)
    except BoxCbfError as err:
        _err(f"{type(err).__name__}: {err}")
        return EXIT_USAGE if isinstance(err, (ScenarioParseError, ChannelConfigError, SamplingError)) else EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
