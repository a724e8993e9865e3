"""Brute-force exact solver for the safety-filter QP, used as a verification oracle.

Enumerates every candidate active set of size <= m that never contains both
sides of one output channel (3^m candidates), solves the equality-constrained
KKT system for each, and keeps the feasible, dual-feasible candidate of least
cost. Works for any symmetric positive-definite G, not only the Gram choice.
"""
from __future__ import annotations
from itertools import combinations, product
from typing import Iterator, List, Optional, Sequence, Tuple
import logging

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from . import config
from .ecbf import decoupling_matrix, evaluate_channels, stack_constraints
from .errors import ConditioningError, InfeasibleQpError
from .models import KktResiduals, OutputChannel, QpInstance, QpSolution, SystemModel

logger = logging.getLogger(__name__)

__all__ = [
    "build_qp_instance",
    "candidate_active_sets",
    "solve_active_set_enumeration",
    "kkt_residuals",
]


def build_qp_instance(channels: Sequence[OutputChannel], model: SystemModel, x: np.ndarray,
                      k_d: np.ndarray, G: Optional[np.ndarray] = None) -> QpInstance:
    """QP data at x; G defaults to the Gram matrix B'B."""
    B, _ = decoupling_matrix(model, x)
    c, D = stack_constraints(channels, evaluate_channels(channels, x))
    if G is None:
        G = B.T @ B
        G = 0.5 * (G + G.T)
    return QpInstance(G=G, k_d=np.asarray(k_d, dtype=float), c=c, D=D)


def candidate_active_sets(m: int) -> Iterator[Tuple[int, ...]]:
    """Constraint index tuples with at most one side per channel (row 2i lower, 2i+1 upper)."""
    for k in range(m + 1):
        for chans in combinations(range(m), k):
            for sides in product((0, 1), repeat=k):
                yield tuple(2 * i + s for i, s in zip(chans, sides))


def _solve_candidate(inst: QpInstance, active: Tuple[int, ...]) -> Tuple[np.ndarray, np.ndarray]:
    m = inst.m
    if not active:
        return inst.k_d.copy(), np.zeros(0)
    DA = inst.D[list(active)]
    cA = inst.c[list(active)]
    k = len(active)
    # [G  -DA'] [u  ]   [G k_d]
    # [DA  0  ] [lam] = [-cA  ]
    K = np.zeros((m + k, m + k))
    K[:m, :m] = inst.G
    K[:m, m:] = -DA.T
    K[m:, :m] = DA
    cond = np.linalg.cond(K)
    if not np.isfinite(cond) or cond > config.KKT_COND_LIMIT:
        raise ConditioningError(cond, config.KKT_COND_LIMIT)
    rhs = np.concatenate([inst.G @ inst.k_d, -cA])
    sol = lu_solve(lu_factor(K), rhs)
    return sol[:m], sol[m:]


def solve_active_set_enumeration(inst: QpInstance) -> QpSolution:
    m = inst.m
    best: Optional[QpSolution] = None
    accepted: List[Tuple[float, np.ndarray]] = []
    examined = 0
    for active in candidate_active_sets(m):
        examined += 1
        u, lam_a = _solve_candidate(inst, active)
        if lam_a.size and np.min(lam_a) < -config.ORACLE_LAMBDA_TOL:
            continue
        if np.min(inst.slacks(u)) < -config.ORACLE_SLACK_TOL:
            continue
        lam = np.zeros(2 * m)
        lam[list(active)] = np.maximum(lam_a, 0.0)
        obj = inst.objective(u)
        accepted.append((obj, u))
        if best is None or obj < best.objective:
            best = QpSolution(u=u, lam=lam, active=frozenset(active), objective=obj,
                              accepted=0, examined=0)
    if best is None:
        raise InfeasibleQpError(examined)

    for obj, u in accepted:
        if abs(obj - best.objective) <= 1e-12 and np.linalg.norm(u - best.u) > 1e-9:
            logger.warning("distinct near-optimal candidates: |du|=%.3e", np.linalg.norm(u - best.u))
    return QpSolution(u=best.u, lam=best.lam, active=best.active, objective=best.objective,
                      accepted=len(accepted), examined=examined)


def kkt_residuals(inst: QpInstance, u: np.ndarray, lam: np.ndarray) -> KktResiduals:
    """(stationarity, primal, dual, complementarity) residuals; all zero at the optimum."""
    u = np.asarray(u, dtype=float).reshape(-1)
    lam = np.asarray(lam, dtype=float).reshape(-1)
    slacks = inst.slacks(u)
    return KktResiduals(
        stationarity=float(np.max(np.abs(inst.G @ (u - inst.k_d) - inst.D.T @ lam))),
        primal=float(max(0.0, -np.min(slacks))),
        dual=float(max(0.0, -np.min(lam))),
        complementarity=float(np.max(np.abs(lam * slacks))),
    )
