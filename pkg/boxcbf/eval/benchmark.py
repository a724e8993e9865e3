"""Closed-form filter versus brute-force oracle on random (state, k_d) pairs."""
from __future__ import annotations
from typing import Any, Callable, Dict, List, Optional, Sequence
from time import perf_counter
import logging

import numpy as np

from ..filter import closed_form_filter, gram_orthogonality_check
from ..models import OutputChannel, SystemModel
from ..qp_oracle import build_qp_instance, kkt_residuals, solve_active_set_enumeration
from ..systems import DOUBLE_INTEGRATOR, PLANAR_DRONE, resolve_models, sample_states
from .metrics import aggregate_equivalence_metrics

logger = logging.getLogger(__name__)

__all__ = [
    "BENCHMARK_CHANNELS",
    "KD_RANGE",
    "default_channels",
    "evaluate_sample",
    "run_equivalence_benchmark",
]

KD_RANGE = 20.0

# (name, lower, upper, roots) per bundled model
BENCHMARK_CHANNELS = {
    PLANAR_DRONE: (("z", 0.0, 2.0, (-1.0, -1.0)), ("theta", -1.0, 1.0, (-1.0, -1.0))),
    DOUBLE_INTEGRATOR: (("x", -1.0, 1.0, (-1.0, -2.0)), ("z", 0.0, 2.0, (-1.0, -1.0))),
}

# keeps cond(B) <= 1/cos(1.5) for the drone
_DRONE_THETA_LIMIT = 1.5


def default_channels(model: SystemModel) -> List[OutputChannel]:
    table = {name: (lo, up, roots) for name, lo, up, roots in BENCHMARK_CHANNELS[model.name]}
    return [OutputChannel(ev, table[ev.name][0], table[ev.name][1], np.array(table[ev.name][2]))
            for ev in model.outputs]


def _benchmark_box(model: SystemModel) -> np.ndarray:
    box = np.array(model.sample_box, dtype=float)
    if model.name == PLANAR_DRONE:
        box[2] = np.clip(box[2], -_DRONE_THETA_LIMIT, _DRONE_THETA_LIMIT)
    return box


def evaluate_sample(channels: Sequence[OutputChannel], model: SystemModel,
                    x: np.ndarray, k_d: np.ndarray) -> Dict[str, Any]:
    cf = closed_form_filter(channels, model, x, k_d)
    inst = build_qp_instance(channels, model, x, k_d)
    qp = solve_active_set_enumeration(inst)

    deviation = float(np.linalg.norm(cf.u_star - qp.u) / (1.0 + np.linalg.norm(qp.u)))
    alpha1 = np.array([ch.alpha[0] for ch in channels])
    widths = np.array([ch.width for ch in channels])
    pair = cf.slack_lower + cf.slack_upper
    expected = alpha1 * widths
    pair_err = float(np.max(np.abs(pair - expected) / (1.0 + np.abs(expected))))
    cf_active = frozenset(j for j, lam in enumerate(cf.lambdas) if lam > 0)
    qp_active = frozenset(j for j in qp.active if qp.lam[j] > 0)
    return {
        "deviation": deviation,
        "kkt_closed_form": kkt_residuals(inst, cf.u_star, cf.lambdas).worst(),
        "kkt_oracle": kkt_residuals(inst, qp.u, qp.lam).worst(),
        "gram_deviation": gram_orthogonality_check(model, x).max_deviation,
        "pair_sum_error": pair_err,
        "case_iv": bool(np.any((cf.omega_lower < 0) & (cf.omega_upper < 0))),
        "both_sides": bool(np.any((cf.lambda_lower > 0) & (cf.lambda_upper > 0))),
        "active": len(cf_active),
        "same_active_set": cf_active == qp_active,
    }


def run_equivalence_benchmark(model_name: str, n: int, seed: int = 0,
                              channels: Optional[Sequence[OutputChannel]] = None,
                              progress: Optional[Callable[[int, int], None]] = None,
                              use_tqdm: bool = False) -> Dict[str, Any]:
    """Per-sample generators are seeded with (seed, i) so results do not depend on ordering."""
    if n <= 0:
        raise ValueError(f"sample count must be positive, got {n}")
    model, _ = resolve_models(model_name)
    if model.name not in BENCHMARK_CHANNELS:
        raise ValueError(f"no benchmark channels for model '{model_name}'")
    channels = list(channels) if channels is not None else default_channels(model)
    box = _benchmark_box(model)

    bar = None
    if progress is None and use_tqdm:
        try:  # pragma: no cover - optional dependency
            from tqdm.auto import tqdm  # type: ignore
            bar = tqdm(total=n, desc=f"compare-qp {model_name}", leave=True)
        except Exception:
            pass

    rows: List[Dict[str, Any]] = []
    start = perf_counter()
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        x = sample_states(model, rng, 1, box=box)[0]
        k_d = rng.uniform(-KD_RANGE, KD_RANGE, size=model.input_dim)
        row = evaluate_sample(channels, model, x, k_d)
        row["index"] = i
        rows.append(row)
        if bar is not None:
            bar.update(1)
        if progress:
            progress(i + 1, n)
    if bar is not None:
        bar.close()
    elapsed = perf_counter() - start

    aggregates = aggregate_equivalence_metrics(rows)
    aggregates["model"] = model_name
    aggregates["seed"] = seed
    aggregates["benchmark_time_seconds"] = elapsed
    worst = max(rows, key=lambda r: r["deviation"])
    logger.info("compare-qp %s: %d samples, max deviation %.3e (sample %d), %.2fs",
                model_name, n, worst["deviation"], worst["index"], elapsed)
    return {"aggregate_metrics": aggregates, "individual_evaluations": rows}
