"""Closed-form multi-ECBF safety filter with Gram weighting G = B'B.

With G = B'B the constraint rows are orthonormal in the G^{-1} inner product,
so each output channel's pair of multipliers decouples and the QP optimum is
an explicit clip per channel. G^{-1} b_i is column i of B^{-1}; G itself is
never formed or inverted on the hot path.
"""
from __future__ import annotations
from typing import Callable, List, Sequence, Tuple

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from . import config
from .ecbf import decoupling_matrix, evaluate_channels, stack_constraints
from .models import LOWER, UPPER, FilterDecision, GramCheck, OutputChannel, SystemModel

__all__ = [
    "closed_form_filter",
    "constraint_slacks",
    "gram_orthogonality_check",
    "make_safety_filter",
]

NominalController = Callable[[np.ndarray, float], np.ndarray]


def _active_set(slacks: np.ndarray, lambdas: np.ndarray, scale: np.ndarray) -> Tuple[Tuple[int, str], ...]:
    active: List[Tuple[int, str]] = []
    for j, (s, lam) in enumerate(zip(slacks, lambdas)):
        if lam > 0 or abs(s) <= config.FEAS_TOL * scale[j]:
            active.append((j // 2, LOWER if j % 2 == 0 else UPPER))
    return tuple(active)


def closed_form_filter(channels: Sequence[OutputChannel], model: SystemModel,
                       x: np.ndarray, k_d: np.ndarray) -> FilterDecision:
    x = np.asarray(x, dtype=float)
    k_d = np.asarray(k_d, dtype=float).reshape(-1)
    B, _ = decoupling_matrix(model, x)
    m = B.shape[0]
    evals = evaluate_channels(channels, x)

    a = np.array([e.a for e in evals])
    alpha1 = np.array([ch.alpha[0] for ch in channels])
    h_lo = np.array([e.h_lower for e in evals])
    h_up = np.array([e.h_upper for e in evals])
    bk = B @ k_d

    omega_lower = a + alpha1 * h_lo + bk
    omega_upper = -a + alpha1 * h_up - bk
    lambda_lower = np.maximum(0.0, -omega_lower)
    lambda_upper = np.maximum(0.0, -omega_upper)

    # G^{-1} b_i = B^{-1} e_i
    correction = lu_solve(lu_factor(B), lambda_lower - lambda_upper)
    u_star = k_d + correction

    c, D = stack_constraints(channels, evals)
    du = D @ u_star
    slacks = c + du
    scale = 1.0 + np.abs(c) + np.abs(du)
    lambdas = np.empty(2 * m)
    lambdas[0::2] = lambda_lower
    lambdas[1::2] = lambda_upper
    return FilterDecision(
        u_star=u_star,
        k_d=k_d,
        lambda_lower=lambda_lower,
        lambda_upper=lambda_upper,
        omega_lower=omega_lower,
        omega_upper=omega_upper,
        slack_lower=slacks[0::2].copy(),
        slack_upper=slacks[1::2].copy(),
        active_set=_active_set(slacks, lambdas, scale),
    )


def constraint_slacks(channels: Sequence[OutputChannel], model: SystemModel,
                      x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """LHS of the 2m ECBF constraints at u, ordered (lower_1, upper_1, lower_2, ...)."""
    x = np.asarray(x, dtype=float)
    decoupling_matrix(model, x)
    c, D = stack_constraints(channels, evaluate_channels(channels, x))
    return c + D @ np.asarray(u, dtype=float).reshape(-1)


def gram_orthogonality_check(model: SystemModel, x: np.ndarray) -> GramCheck:
    """max |b_i' G^{-1} b_j - delta_ij| with G formed explicitly, plus conditioning."""
    B, sigma_min = decoupling_matrix(model, x)
    G = B.T @ B
    M = B @ np.linalg.solve(G, B.T)
    deviation = float(np.max(np.abs(M - np.eye(B.shape[0]))))
    return GramCheck(max_deviation=deviation, sigma_min=sigma_min, condition=float(np.linalg.cond(B)))


def make_safety_filter(channels: Sequence[OutputChannel], model: SystemModel,
                       nominal: NominalController) -> Callable[[np.ndarray, float], FilterDecision]:
    """Memoryless filtered controller for a possibly time-varying nominal k_d(x, t)."""
    def controller(x: np.ndarray, t: float) -> FilterDecision:
        return closed_form_filter(channels, model, x, nominal(x, t))
    return controller
