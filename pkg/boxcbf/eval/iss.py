"""Input-to-state tracking certificate and the pointwise tracking-bound checker.

For PD tracking on a model with unit decoupling (B = I) every channel has
error dynamics xi' = A xi + E k_cbf with xi = (e, e'), A = [[0, 1], [-kp, -kd]]
and E = (0, 1). The certificate is V = sum_i xi_i' P xi_i with A'P + PA = -I.
"""
from __future__ import annotations
from typing import Callable, Dict, Optional
import logging
import math

import numpy as np
from scipy.linalg import eigh, solve_continuous_lyapunov

from .. import config
from ..errors import InvalidCertificateError
from ..models import IssCertificate, IssReport, SimTrace, SystemModel

logger = logging.getLogger(__name__)

__all__ = [
    "pd_error_dynamics",
    "pd_tracking_certificate",
    "validate_certificate",
    "check_iss_bound",
]

_E = np.array([0.0, 1.0])


def pd_error_dynamics(kp: float, kd: float) -> np.ndarray:
    if not (kp > 0 and kd > 0):
        raise ValueError(f"PD gains must be positive, got kp={kp}, kd={kd}")
    return np.array([[0.0, 1.0], [-kp, -kd]])


def _grid(extent: float, points: int) -> np.ndarray:
    axis = np.linspace(-extent, extent, points)
    E, Ed = np.meshgrid(axis, axis, indexing="ij")
    return np.column_stack([E.ravel(), Ed.ravel()])


def validate_certificate(P: np.ndarray, A: np.ndarray, rho: float, gamma: float, sigma: float,
                         extent: float = 5.0, points: int = 41) -> Dict[str, float]:
    """Worst violations of the two certificate inequalities on a grid of (e, e').

    lower:       rho e^2 - V                         (must be <= 0)
    dissipation: V' + gamma V + sigma |dV/dxi E|^2   (must be <= 0; the k_cbf terms cancel)
    """
    xi = _grid(extent, points)
    V = np.einsum("ni,ij,nj->n", xi, P, xi)
    Vdot = 2.0 * np.einsum("ni,ij,jk,nk->n", xi, P, A, xi)
    grad_E = 2.0 * xi @ P @ _E
    lower = rho * xi[:, 0] ** 2 - V
    dissipation = Vdot + gamma * V + sigma * grad_E ** 2
    scale = 1.0 + np.max(np.abs(V))
    return {
        "lower": float(np.max(lower) / scale),
        "dissipation": float(np.max(dissipation) / scale),
    }


def pd_tracking_certificate(model: SystemModel, target_outputs: Callable[[float], np.ndarray],
                            kp: float, kd: float,
                            project: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                            derate: float = config.ISS_DERATE,
                            extent: float = 5.0, points: int = 41) -> IssCertificate:
    """Quadratic certificate for the IO-linearized PD tracker on a unit-decoupling model."""
    probe = np.zeros(model.state_dim)
    B = np.vstack([np.asarray(o.b_row(probe), dtype=float) for o in model.outputs])
    if not np.allclose(B, np.eye(model.input_dim)) or any(o.rel_degree != 2 for o in model.outputs):
        raise ValueError(f"model '{model.name}' needs B = I and relative degree 2 on every output")
    if not 0 < derate <= 1:
        raise ValueError(f"derate must lie in (0, 1], got {derate}")

    A = pd_error_dynamics(kp, kd)
    Q = np.eye(2)
    P = solve_continuous_lyapunov(A.T, -Q)
    P = 0.5 * (P + P.T)
    # min of V / e^2 over e' is the Schur complement
    rho = float(P[0, 0] - P[0, 1] ** 2 / P[1, 1])
    PE = P @ _E
    sigma_full = float(np.linalg.eigvalsh(Q)[0] / (8.0 * PE @ PE))
    M = Q - 4.0 * sigma_full * np.outer(PE, PE)
    gamma_full = float(eigh(M, P, eigvals_only=True)[0])
    gamma, sigma = derate * gamma_full, derate * sigma_full

    residuals = validate_certificate(P, A, rho, gamma, sigma, extent=extent, points=points)
    if max(residuals.values()) > config.ISS_TOL:
        raise InvalidCertificateError(residuals)

    proj = project or (lambda x: np.asarray(x, dtype=float))

    def value(x: np.ndarray, t: float) -> float:
        xf = proj(x)
        e = np.array([o.y(xf) for o in model.outputs]) - np.asarray(target_outputs(t), dtype=float)
        ed = np.array([np.asarray(o.lie_f_chain(xf), dtype=float)[0] for o in model.outputs])
        xi = np.column_stack([e, ed])
        return float(np.einsum("ni,ij,nj->", xi, P, xi))

    logger.info("tracking certificate kp=%g kd=%g: rho=%.4g gamma=%.4g sigma=%.4g", kp, kd, rho, gamma, sigma)
    return IssCertificate(P=P, rho=rho, gamma=gamma, sigma=sigma, kp=kp, kd=kd, value=value,
                          residuals=residuals, grid_size=points * points)


def _segment_starts(trace: SimTrace) -> np.ndarray:
    if trace.steps == 0:
        return np.zeros(0, dtype=int)
    changed = np.any(np.diff(trace.targets, axis=0) != 0, axis=1)
    return np.concatenate([[0], np.flatnonzero(changed) + 1])


def check_iss_bound(trace: SimTrace, cert: IssCertificate, tol: float = config.ISS_TOL) -> IssReport:
    """Pointwise check of |e(t)| <= beta(V(t_s), t - t_s) + iota(sup |k_cbf| on [t_s, t]).

    t_s is the start of the setpoint segment containing t; with a single
    setpoint this is the bound from t = 0. Output boundedness of e is reported
    alongside.
    """
    if cert.residuals and max(cert.residuals.values()) > config.ISS_TOL:
        raise InvalidCertificateError(cert.residuals)

    n = trace.steps
    err_norm = np.linalg.norm(trace.errors, axis=1) if n else np.zeros(0)
    kcbf_norm = np.linalg.norm(trace.k_cbf, axis=1) if n else np.zeros(0)
    bound = np.empty(n)
    starts = _segment_starts(trace)
    stops = np.append(starts[1:], n)
    for k0, k1 in zip(starts, stops):
        v0 = cert.value(trace.states[k0], float(trace.t[k0]))
        mu = np.maximum.accumulate(kcbf_norm[k0:k1])
        for j, k in enumerate(range(k0, k1)):
            bound[k] = cert.beta(v0, float(trace.t[k] - trace.t[k0])) + cert.iota(float(mu[j]))

    slack = err_norm - bound
    worst = int(np.argmax(slack)) if n else -1
    max_violation = float(max(slack[worst], 0.0)) if n else 0.0

    max_e = float(err_norm.max()) if n else 0.0
    max_y = float(np.linalg.norm(trace.outputs, axis=1).max()) if n else 0.0
    max_yd = float(np.linalg.norm(trace.targets, axis=1).max()) if n else 0.0
    bounded = bool(np.all(np.isfinite([max_e, max_y, max_yd])) and max_e <= max_y + max_yd + tol)
    if not bounded:
        logger.warning("tracking error of '%s' is not bounded by the outputs and targets", trace.scenario)
    return IssReport(
        passed=bool(max_violation <= tol),
        bounded=bounded,
        max_violation=max_violation,
        worst_step=worst,
        max_error=max_e,
        max_output=max_y,
        max_target=max_yd,
        bound=bound,
        error_norm=err_norm,
        segments=int(starts.size),
    )
