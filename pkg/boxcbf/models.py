"""Dataclasses and type definitions for boxcbf."""
from __future__ import annotations
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple
import math

import numpy as np

from .errors import ChannelConfigError

LOWER = "lower"
UPPER = "upper"

StateMap = Callable[[np.ndarray], np.ndarray]


def _anywhere(x: np.ndarray) -> bool:
    return True


# ----------------------- systems ------------------------------

@dataclass(frozen=True, eq=False)
class OutputChannelEvaluator:
    """Analytic Lie-derivative chain of one output y_i.

    `lie_f_chain(x)` returns (L_f y, ..., L_f^r y) and `b_row(x)` returns
    L_g L_f^{r-1} y as a length-m vector.
    """
    name: str
    rel_degree: int
    y: Callable[[np.ndarray], float]
    lie_f_chain: StateMap
    b_row: StateMap
    in_region: Callable[[np.ndarray], bool] = _anywhere

    def __post_init__(self):
        if int(self.rel_degree) < 1:
            raise ChannelConfigError(f"relative degree must be positive, got {self.rel_degree}",
                                     channel=self.name)


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Control-affine system x' = f(x) + g(x) u with a square output map."""
    name: str
    state_dim: int
    input_dim: int
    drift: StateMap
    control_matrix: StateMap
    outputs: Tuple[OutputChannelEvaluator, ...]
    in_region: Callable[[np.ndarray], bool] = _anywhere
    state_names: Tuple[str, ...] = ()
    input_names: Tuple[str, ...] = ()
    sample_box: Optional[np.ndarray] = None
    params: Any = None

    def __post_init__(self):
        if self.state_dim < 1 or self.input_dim < 1:
            raise ChannelConfigError(f"model '{self.name}' needs positive state and input dimensions")
        if len(self.outputs) != self.input_dim:
            raise ChannelConfigError(
                f"model '{self.name}' has {len(self.outputs)} outputs for {self.input_dim} inputs; "
                "only square systems are supported"
            )
        if not self.state_names:
            object.__setattr__(self, "state_names", tuple(f"x{i}" for i in range(self.state_dim)))
        if not self.input_names:
            object.__setattr__(self, "input_names", tuple(f"u{i}" for i in range(self.input_dim)))

    @property
    def output_names(self) -> Tuple[str, ...]:
        return tuple(o.name for o in self.outputs)

    def dynamics(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.drift(x) + self.control_matrix(x) @ u


@dataclass(frozen=True)
class PlanarDroneParams:
    gravity: float = 9.81
    theta_margin: float = 0.01

    def __post_init__(self):
        if not (self.gravity > 0 and math.isfinite(self.gravity)):
            raise ChannelConfigError(f"gravity must be positive, got {self.gravity}")
        # margin 0 is accepted so the singular boundary can be probed deliberately
        if not (0.0 <= self.theta_margin < math.pi / 2):
            raise ChannelConfigError(f"theta_margin must lie in [0, pi/2), got {self.theta_margin}")


@dataclass(frozen=True)
class RomAdapterParams:
    """Attitude PD of the adapter; the RoM filter runs on the output box shrunk by box_margin."""
    kp_theta: float = 40.0
    kd_theta: float = 12.0
    box_margin: float = 0.0

    def __post_init__(self):
        if not (self.kp_theta > 0 and self.kd_theta > 0):
            raise ChannelConfigError(
                f"attitude PD gains must be positive, got kp={self.kp_theta}, kd={self.kd_theta}"
            )
        if not (math.isfinite(self.box_margin) and self.box_margin >= 0):
            raise ChannelConfigError(f"box margin must be finite and >= 0, got {self.box_margin}")


@dataclass(frozen=True)
class AdapterCommand:
    thrust: float
    moment: float
    theta_d: float


# ----------------------- channels / ECBF ----------------------

@dataclass(frozen=True, eq=False)
class OutputChannel:
    """Box constraint lower <= y_i(x) <= upper with ECBF roots shared by both sides."""
    evaluator: OutputChannelEvaluator
    lower: float
    upper: float
    roots: np.ndarray
    alpha: np.ndarray = field(init=False)

    def __post_init__(self):
        from .ecbf import alpha_from_roots

        name = self.evaluator.name
        lower, upper = float(self.lower), float(self.upper)
        if not (math.isfinite(lower) and math.isfinite(upper)):
            raise ChannelConfigError(f"bounds must be finite, got [{lower}, {upper}]", channel=name)
        if not upper > lower:
            raise ChannelConfigError(f"upper bound {upper} must exceed lower bound {lower}", channel=name)
        roots = np.atleast_1d(np.asarray(self.roots, dtype=float))
        if roots.size != self.evaluator.rel_degree:
            raise ChannelConfigError(
                f"expected {self.evaluator.rel_degree} roots (relative degree), got {roots.size}",
                channel=name,
            )
        try:
            alpha = alpha_from_roots(roots)
        except ChannelConfigError as err:
            raise ChannelConfigError(err.detail, channel=name, index=err.index) from None
        # monic coefficients of prod(s - root), ascending powers
        expected = np.poly(roots)[1:][::-1]
        if not np.allclose(alpha, expected, rtol=1e-9, atol=1e-12 * np.max(np.abs(expected))):
            raise ChannelConfigError("alpha expansion does not match the roots", channel=name)
        if not alpha[0] > 0:
            raise ChannelConfigError(f"alpha_1 must be positive, got {alpha[0]}", channel=name)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "roots", roots)
        object.__setattr__(self, "alpha", alpha)

    @property
    def name(self) -> str:
        return self.evaluator.name

    @property
    def rel_degree(self) -> int:
        return self.evaluator.rel_degree

    @property
    def width(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True, eq=False)
class EcbfEvaluation:
    y: float
    h_lower: float
    h_upper: float
    H_lower: np.ndarray
    H_upper: np.ndarray
    a: float
    b: np.ndarray
    psi_lower: np.ndarray
    psi_upper: np.ndarray


@dataclass(frozen=True)
class ChannelMembership:
    name: str
    lower_member: bool
    upper_member: bool
    psi_lower: np.ndarray
    psi_upper: np.ndarray
    margin: float

    @property
    def member(self) -> bool:
        return self.lower_member and self.upper_member


@dataclass(frozen=True)
class GramCheck:
    max_deviation: float
    sigma_min: float
    condition: float


@dataclass
class SampleCheck:
    index: int
    state: np.ndarray
    passed: bool
    sigma_min: float
    worst_channel: str = ""
    worst_kind: str = ""
    worst_residual: float = 0.0
    detail: str = ""


@dataclass
class RelDegreeReport:
    model: str
    samples: List[SampleCheck]

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.samples)

    @property
    def failures(self) -> List[SampleCheck]:
        return [s for s in self.samples if not s.passed]


@dataclass
class CompatibilityReport:
    passed: bool
    trials: int
    failures: int
    worst_identity_error: float
    witness: Optional[np.ndarray] = None
    feasible_input: Optional[np.ndarray] = None
    min_feasible_slack: float = float("nan")


# ----------------------- filter / QP ---------------------------

@dataclass(frozen=True, eq=False)
class FilterDecision:
    """Primal-dual solution of the box-constrained ECBF filter at one state.

    Constraint order is interleaved (lower_1, upper_1, lower_2, ...).
    """
    u_star: np.ndarray
    k_d: np.ndarray
    lambda_lower: np.ndarray
    lambda_upper: np.ndarray
    omega_lower: np.ndarray
    omega_upper: np.ndarray
    slack_lower: np.ndarray
    slack_upper: np.ndarray
    active_set: Tuple[Tuple[int, str], ...]

    @property
    def k_cbf(self) -> np.ndarray:
        return self.u_star - self.k_d

    @property
    def lambdas(self) -> np.ndarray:
        return interleave(self.lambda_lower, self.lambda_upper)

    @property
    def slacks(self) -> np.ndarray:
        return interleave(self.slack_lower, self.slack_upper)


@dataclass(frozen=True, eq=False)
class QpInstance:
    """min 1/2 |u - k_d|_G^2  s.t.  c + D u >= 0."""
    G: np.ndarray
    k_d: np.ndarray
    c: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        G = np.atleast_2d(np.asarray(self.G, dtype=float))
        k_d = np.atleast_1d(np.asarray(self.k_d, dtype=float))
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        m = k_d.size
        if G.shape != (m, m) or D.shape != (2 * m, m) or c.size != 2 * m:
            raise ValueError(f"inconsistent QP shapes: G{G.shape}, k_d({m},), c({c.size},), D{D.shape}")
        if np.max(np.abs(G - G.T)) > 1e-12 * max(1.0, np.max(np.abs(G))):
            raise ValueError("G must be symmetric")
        if np.linalg.eigvalsh(G)[0] <= 0:
            raise ValueError("G must be positive definite")
        if not np.allclose(D[1::2], -D[0::2], rtol=0, atol=1e-12 * max(1.0, np.max(np.abs(D)))):
            raise ValueError("constraint rows must come in opposite-sign pairs")
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "k_d", k_d)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "D", D)

    @property
    def m(self) -> int:
        return self.k_d.size

    def slacks(self, u: np.ndarray) -> np.ndarray:
        return self.c + self.D @ u

    def objective(self, u: np.ndarray) -> float:
        du = np.asarray(u, dtype=float) - self.k_d
        return 0.5 * float(du @ self.G @ du)


@dataclass(frozen=True, eq=False)
class QpSolution:
    u: np.ndarray
    lam: np.ndarray
    active: frozenset
    objective: float
    accepted: int
    examined: int


@dataclass(frozen=True)
class KktResiduals:
    stationarity: float
    primal: float
    dual: float
    complementarity: float

    def worst(self) -> float:
        return max(self.stationarity, self.primal, self.dual, self.complementarity)


# ----------------------- scenarios / traces --------------------

@dataclass(frozen=True)
class ChannelSpec:
    name: str
    lower: float
    upper: float
    roots: Tuple[float, ...]


@dataclass(frozen=True)
class NominalSpec:
    kp: float = 4.0
    kd: float = 4.0
    kp_x: float = 0.5
    kd_x: float = 1.0
    theta_cmd_max: float = 0.9


@dataclass(frozen=True)
class Setpoint:
    time: float
    target: Tuple[float, ...]


@dataclass(frozen=True)
class AuditSpec:
    tolerance: Optional[float] = None
    levels: str = "all"  # "all" or "outputs"


@dataclass
class Scenario:
    name: str
    model: str
    model_params: Dict[str, float]
    channels: List[ChannelSpec]
    setpoints: List[Setpoint]
    x0: np.ndarray
    t_final: float
    dt: float
    integrator: str = "rk4"
    nominal: NominalSpec = field(default_factory=NominalSpec)
    adapter: RomAdapterParams = field(default_factory=RomAdapterParams)
    audit: AuditSpec = field(default_factory=AuditSpec)
    seed: int = 0
    x0_outside_safe_set: bool = False

    def target_at(self, t: float) -> np.ndarray:
        """Piecewise-constant setpoint schedule."""
        current = self.setpoints[0].target
        for sp in self.setpoints:
            if sp.time <= t + 1e-12:
                current = sp.target
            else:
                break
        return np.asarray(current, dtype=float)

    def switch_times(self) -> List[float]:
        return [sp.time for sp in self.setpoints[1:]]


@dataclass
class SimTrace:
    """Per-step log of a closed-loop run; row k holds the decision applied on [t_k, t_k+dt)."""
    scenario: str
    state_names: Tuple[str, ...]
    input_names: Tuple[str, ...]
    channel_names: Tuple[str, ...]
    rel_degrees: Tuple[int, ...]
    dt: float
    t: np.ndarray
    states: np.ndarray
    outputs: np.ndarray
    targets: np.ndarray
    u: np.ndarray
    u_star: np.ndarray
    k_d: np.ndarray
    k_cbf: np.ndarray
    slacks: np.ndarray
    psi: np.ndarray
    lambdas: np.ndarray
    errors: np.ndarray
    sup_kcbf: np.ndarray
    status: str = "complete"
    message: str = ""
    x0_outside_safe_set: bool = False
    # plant inputs, when the plant is actuated through an adapter rather than by u* directly
    applied_input_names: Tuple[str, ...] = ()

    @property
    def steps(self) -> int:
        return self.t.size

    @property
    def complete(self) -> bool:
        return self.status == "complete"

    def psi_columns(self) -> List[str]:
        cols: List[str] = []
        for name, r in zip(self.channel_names, self.rel_degrees):
            cols += [f"psi_{name}_lower_{j}" for j in range(r)]
            cols += [f"psi_{name}_upper_{j}" for j in range(r)]
        return cols

    def psi_block(self, channel_index: int) -> Tuple[np.ndarray, np.ndarray]:
        """(psi_lower, psi_upper) arrays of shape (steps, r_i) for one channel."""
        start = sum(2 * r for r in self.rel_degrees[:channel_index])
        r = self.rel_degrees[channel_index]
        return self.psi[:, start:start + r], self.psi[:, start + r:start + 2 * r]

    def h_values(self) -> np.ndarray:
        """Level-0 ECBF values (h_lower_i, h_upper_i) interleaved, shape (steps, 2m)."""
        cols = []
        for i in range(len(self.channel_names)):
            lo, up = self.psi_block(i)
            cols += [lo[:, 0], up[:, 0]]
        return np.column_stack(cols)


@dataclass
class InvarianceReport:
    scenario: str
    tolerance: float
    levels: str
    min_psi_lower: Dict[str, np.ndarray]
    min_psi_upper: Dict[str, np.ndarray]
    min_h: float
    min_slack: float
    passed: bool
    failures: List[str]
    expected_failure: bool = False
    max_complementarity: float = 0.0


@dataclass
class IssCertificate:
    """Quadratic tracking certificate V = xi' P xi over the stacked error (e, e_dot)."""
    P: np.ndarray
    rho: float
    gamma: float
    sigma: float
    kp: float
    kd: float
    value: Callable[[np.ndarray, float], float]
    residuals: Dict[str, float] = field(default_factory=dict)
    grid_size: int = 0

    def __post_init__(self):
        if not (self.rho > 0 and self.gamma > 0 and self.sigma > 0):
            raise ValueError(f"rho, gamma, sigma must be positive: {self.rho}, {self.gamma}, {self.sigma}")

    def beta(self, v0: float, s: float) -> float:
        return math.sqrt(max(v0, 0.0) / self.rho) * math.exp(-0.5 * self.gamma * s)

    def iota(self, mu: float) -> float:
        return mu / (2.0 * math.sqrt(self.gamma * self.rho * self.sigma))


@dataclass
class IssReport:
    passed: bool
    bounded: bool
    max_violation: float
    worst_step: int
    max_error: float
    max_output: float
    max_target: float
    bound: np.ndarray
    error_norm: np.ndarray
    segments: int


def interleave(lower: Sequence[float], upper: Sequence[float]) -> np.ndarray:
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    out = np.empty(2 * lower.size)
    out[0::2] = lower
    out[1::2] = upper
    return out


__all__ = [
    "LOWER",
    "UPPER",
    "OutputChannelEvaluator",
    "SystemModel",
    "PlanarDroneParams",
    "RomAdapterParams",
    "AdapterCommand",
    "OutputChannel",
    "EcbfEvaluation",
    "ChannelMembership",
    "GramCheck",
    "SampleCheck",
    "RelDegreeReport",
    "CompatibilityReport",
    "FilterDecision",
    "QpInstance",
    "QpSolution",
    "KktResiduals",
    "ChannelSpec",
    "NominalSpec",
    "Setpoint",
    "AuditSpec",
    "Scenario",
    "SimTrace",
    "InvarianceReport",
    "IssCertificate",
    "IssReport",
    "interleave",
]
