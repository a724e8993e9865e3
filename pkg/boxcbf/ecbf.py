"""Exponential CBF mathematics for paired box constraints on outputs.

Everything here is independent of the QP: gain/root conversion, the psi
recursion, per-channel ECBF evaluation, the decoupling matrix, numeric
relative-degree verification, safe-set membership and the multiplier
(Farkas-type) compatibility certificate.

All functions are pure; evaluators are expected to be free of interior state.
"""
from __future__ import annotations
from typing import List, Optional, Sequence, Tuple
import logging

import numpy as np
from scipy.linalg import lu_factor, lu_solve, svdvals

from . import config
from .errors import ChannelConfigError, IdentityViolation, RankError, RegionError
from .models import (
    ChannelMembership,
    CompatibilityReport,
    EcbfEvaluation,
    OutputChannel,
    RelDegreeReport,
    SampleCheck,
    SystemModel,
    interleave,
)

logger = logging.getLogger(__name__)

__all__ = [
    "alpha_from_roots",
    "roots_from_alpha",
    "psi_coefficients",
    "evaluate_channel",
    "evaluate_channels",
    "stack_constraints",
    "decoupling_matrix",
    "verify_relative_degree",
    "safe_set_membership",
    "compatibility_certificate",
]


def alpha_from_roots(roots: Sequence[float]) -> np.ndarray:
    """Gains alpha = (alpha_1, ..., alpha_r) of prod (s - nu_k) = s^r + alpha_r s^{r-1} + ... + alpha_1."""
    roots = np.atleast_1d(np.asarray(roots, dtype=float))
    if roots.size == 0:
        raise ChannelConfigError("at least one root is required")
    for i, nu in enumerate(roots):
        if not np.isfinite(nu) or not nu < 0:
            raise ChannelConfigError(f"root {nu!r} must be finite and strictly negative", index=i)
    poly = np.array([1.0])
    for nu in roots:
        poly = np.convolve(poly, [1.0, -nu])
    # poly is highest power first: [1, alpha_r, ..., alpha_1]
    return poly[1:][::-1].copy()


def roots_from_alpha(alpha: Sequence[float]) -> np.ndarray:
    """Companion-matrix roots of s^r + alpha_r s^{r-1} + ... + alpha_1 (real parts)."""
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    coeffs = np.concatenate([[1.0], alpha[::-1]])
    return np.roots(coeffs).real


def psi_coefficients(roots: Sequence[float], include_top: bool = False) -> np.ndarray:
    """Lower-triangular C with psi_i = sum_k C[i, k] L_f^k h.

    Row i expands prod_{j<=i} (d/dt - nu_j) applied to h. With `include_top`
    the input-dependent level psi_r is appended as a diagnostic row.
    """
    roots = np.atleast_1d(np.asarray(roots, dtype=float))
    if not np.all(np.isfinite(roots)):
        raise ChannelConfigError("roots must be finite")
    r = roots.size
    size = r + 1 if include_top else r
    C = np.zeros((size, size))
    row = np.array([1.0])
    C[0, 0] = 1.0
    for i in range(1, size):
        # ascending powers of d/dt: (d/dt - nu_i) -> [-nu_i, 1]
        row = np.convolve(row, [-roots[i - 1], 1.0])
        C[i, : row.size] = row
    return C


def evaluate_channel(channel: OutputChannel, x: np.ndarray) -> EcbfEvaluation:
    ev = channel.evaluator
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)) or not ev.in_region(x):
        raise RegionError(x, detail=f"channel '{ev.name}'")
    r = ev.rel_degree
    y = float(ev.y(x))
    chain = np.asarray(ev.lie_f_chain(x), dtype=float).reshape(-1)
    if chain.size != r:
        raise ChannelConfigError(f"lie_f_chain returned {chain.size} entries, expected {r}", channel=ev.name)
    b = np.asarray(ev.b_row(x), dtype=float).reshape(-1)

    h_lower = y - channel.lower
    h_upper = channel.upper - y
    H_lower = np.concatenate([[h_lower], chain[: r - 1]])
    H_upper = np.concatenate([[h_upper], -chain[: r - 1]])
    alpha = channel.alpha
    # a = L_f^r y + sum_{j=1}^{r-1} alpha_{j+1} L_f^j y
    a = chain[r - 1] + float(np.dot(alpha[1:], chain[: r - 1]))
    C = psi_coefficients(channel.roots)
    return EcbfEvaluation(
        y=y,
        h_lower=h_lower,
        h_upper=h_upper,
        H_lower=H_lower,
        H_upper=H_upper,
        a=a,
        b=b,
        psi_lower=C @ H_lower,
        psi_upper=C @ H_upper,
    )


def evaluate_channels(channels: Sequence[OutputChannel], x: np.ndarray) -> List[EcbfEvaluation]:
    return [evaluate_channel(ch, x) for ch in channels]


def stack_constraints(channels: Sequence[OutputChannel],
                      evaluations: Sequence[EcbfEvaluation]) -> Tuple[np.ndarray, np.ndarray]:
    """Constraint constants c (2m,) and rows D (2m, m) in interleaved order.

    c_lower = a + alpha_1 (y - lower), c_upper = -a - alpha_1 (y - upper),
    d_lower = b, d_upper = -b.
    """
    c_lo = np.array([e.a + ch.alpha[0] * e.h_lower for ch, e in zip(channels, evaluations)])
    c_up = np.array([-e.a + ch.alpha[0] * e.h_upper for ch, e in zip(channels, evaluations)])
    B = np.vstack([e.b for e in evaluations])
    D = np.empty((2 * B.shape[0], B.shape[1]))
    D[0::2] = B
    D[1::2] = -B
    return interleave(c_lo, c_up), D


def _check_rank(B: np.ndarray, x: Optional[np.ndarray], tol: float) -> float:
    sigma_min = float(svdvals(B)[-1])
    if not np.isfinite(sigma_min) or sigma_min < tol:
        raise RankError(sigma_min, tol, state=x)
    return sigma_min


def decoupling_matrix(model: SystemModel, x: np.ndarray,
                      tol: float = config.SINGULAR_TOL) -> Tuple[np.ndarray, float]:
    """B(x) with rows b_i(x) and its smallest singular value."""
    x = np.asarray(x, dtype=float)
    B = np.vstack([np.asarray(o.b_row(x), dtype=float).reshape(-1) for o in model.outputs])
    return B, _check_rank(B, x, tol)


# ----------------------- relative degree -----------------------

def _level_function(evaluator, j: int):
    if j == 0:
        return lambda z: float(evaluator.y(z))
    return lambda z: float(np.asarray(evaluator.lie_f_chain(z), dtype=float)[j - 1])


def _directional(fn, x: np.ndarray, direction: np.ndarray, step: float) -> float:
    return (fn(x + step * direction) - fn(x - step * direction)) / (2.0 * step)


def verify_relative_degree(model: SystemModel, samples: Sequence[np.ndarray],
                           fd_step: float = config.FD_STEP,
                           tol: float = config.RELDEG_TOL) -> RelDegreeReport:
    """Finite-difference audit of the supplied Lie chains.

    Per sample and channel: L_g L_f^j y ~ 0 for j < r-1, L_g L_f^{r-1} y ~ b_row,
    L_f (L_f^j y) ~ L_f^{j+1} y, plus invertibility of B inside the valid region.
    """
    if fd_step <= 0:
        raise ValueError(f"fd_step must be positive, got {fd_step}")
    checks: List[SampleCheck] = []
    for idx, x in enumerate(samples):
        x = np.asarray(x, dtype=float)
        B = np.vstack([np.asarray(o.b_row(x), dtype=float).reshape(-1) for o in model.outputs])
        sigma_min = float(svdvals(B)[-1])
        check = SampleCheck(index=idx, state=x, passed=True, sigma_min=sigma_min)
        if not np.isfinite(sigma_min) or sigma_min < config.SINGULAR_TOL or not model.in_region(x):
            check.passed = False
            check.worst_kind = "singular_B"
            check.worst_residual = sigma_min
            check.detail = ("B(x) not invertible inside the declared valid region "
                            f"(sigma_min={sigma_min:.3e})")
            checks.append(check)
            continue

        f = np.asarray(model.drift(x), dtype=float)
        g = np.asarray(model.control_matrix(x), dtype=float)
        worst_ratio = 0.0
        for ev in model.outputs:
            r = ev.rel_degree
            chain = np.asarray(ev.lie_f_chain(x), dtype=float)
            b = np.asarray(ev.b_row(x), dtype=float)
            scale = 1.0 + float(np.max(np.abs(np.concatenate([chain, b]))))
            for j in range(r):
                fn = _level_function(ev, j)
                lg = np.array([_directional(fn, x, g[:, k], fd_step) for k in range(g.shape[1])])
                if j < r - 1:
                    kind, residual = f"L_g L_f^{j} y", float(np.max(np.abs(lg)))
                else:
                    kind, residual = "b_row", float(np.max(np.abs(lg - b)))
                lf = _directional(fn, x, f, fd_step)
                chain_residual = abs(lf - chain[j])
                for k_name, res in ((kind, residual), (f"lie_f_chain[{j}]", chain_residual)):
                    ratio = res / (tol * scale)
                    if ratio > worst_ratio:
                        worst_ratio = ratio
                        check.worst_channel = ev.name
                        check.worst_kind = k_name
                        check.worst_residual = res
        if worst_ratio > 1.0:
            check.passed = False
            check.detail = (f"{check.worst_kind} residual {check.worst_residual:.3e} "
                            f"on channel '{check.worst_channel}'")
        checks.append(check)
    report = RelDegreeReport(model=model.name, samples=checks)
    if not report.passed:
        logger.warning("relative degree check failed on %d/%d samples of %s",
                       len(report.failures), len(checks), model.name)
    return report


# ----------------------- safe set / compatibility --------------

def safe_set_membership(channels: Sequence[OutputChannel], x: np.ndarray) -> List[ChannelMembership]:
    """Membership in the state-only safe set (levels 0..r_i-1) per channel."""
    out: List[ChannelMembership] = []
    for ch in channels:
        e = evaluate_channel(ch, x)
        out.append(ChannelMembership(
            name=ch.name,
            lower_member=bool(np.all(e.psi_lower >= 0)),
            upper_member=bool(np.all(e.psi_upper >= 0)),
            psi_lower=e.psi_lower,
            psi_upper=e.psi_upper,
            margin=float(min(e.psi_lower.min(), e.psi_upper.min())),
        ))
    return out


def compatibility_certificate(channels: Sequence[OutputChannel], x: np.ndarray, trials: int,
                              seed: int = 0,
                              rng: Optional[np.random.Generator] = None) -> CompatibilityReport:
    """Randomized check of the multiplier condition for the 2m ECBF constraints.

    Because the b_i are independent, sum_j lambda_j d_j = 0 forces
    lambda_lower = lambda_upper; on that kernel the weighted constant must be
    sum_i lambda_i alpha_1^i (upper_i - lower_i) >= 0. The identity itself is
    asserted on every draw. A constructive feasible input (every output at
    mid-box slack) is returned alongside.
    """
    if trials < 0:
        raise ValueError("trials must be non-negative")
    rng = rng if rng is not None else np.random.default_rng(seed)
    evals = evaluate_channels(channels, x)
    c, D = stack_constraints(channels, evals)
    B = D[0::2]
    _check_rank(B, x, config.SINGULAR_TOL)

    alpha1 = np.array([ch.alpha[0] for ch in channels])
    widths = np.array([ch.width for ch in channels])
    m = len(channels)

    failures = 0
    witness = None
    worst_identity = 0.0
    for t in range(trials):
        if t == 0:
            lam = np.zeros(m)
        else:
            lam = rng.exponential(1.0, size=m) * (rng.random(m) < 0.8)
        lam_full = interleave(lam, lam)
        kernel = lam_full @ D
        weighted = float(lam_full @ c)
        expected = float(np.sum(lam * alpha1 * widths))
        scale = 1.0 + float(np.sum(np.abs(lam_full * c)))
        err = abs(weighted - expected) / scale
        worst_identity = max(worst_identity, err)
        if err > config.IDENTITY_TOL or np.max(np.abs(kernel), initial=0.0) > config.IDENTITY_TOL * scale:
            raise IdentityViolation(err, config.IDENTITY_TOL)
        if weighted < -config.IDENTITY_TOL * scale:
            failures += 1
            if witness is None:
                witness = lam_full

    # mid-box witness: b_i' u = -a_i - alpha_1^i (y_i - mid_i)
    a = np.array([e.a for e in evals])
    y = np.array([e.y for e in evals])
    mid = np.array([0.5 * (ch.lower + ch.upper) for ch in channels])
    u_w = lu_solve(lu_factor(B), -a - alpha1 * (y - mid))
    min_slack = float(np.min(c + D @ u_w))

    return CompatibilityReport(
        passed=failures == 0 and min_slack > 0,
        trials=trials,
        failures=failures,
        worst_identity_error=worst_identity,
        witness=witness,
        feasible_input=u_w,
        min_feasible_slack=min_slack,
    )
