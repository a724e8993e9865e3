"""Fixed-step closed-loop simulation with zero-order-hold control.

The controller is evaluated once per step at x_k and held over [t_k, t_k + dt).
Row k of the returned trace holds x_k together with the decision taken there;
a final row records x_N and the decision the filter would take at t_N.
"""
from __future__ import annotations
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union
import logging
import math

import numpy as np

from .ecbf import evaluate_channels, safe_set_membership
from .errors import DivergenceError, RegionError
from .filter import closed_form_filter
from .models import FilterDecision, OutputChannel, PlanarDroneParams, Scenario, SimTrace, SystemModel
from .scenario import build_channels, shrink_channels
from .systems import (
    DRONE_WITH_ROM,
    PLANAR_DRONE,
    drone_cascade_controller,
    output_tracking_controller,
    project_drone_to_rom,
    resolve_models,
    rom_to_drone_adapter,
)

logger = logging.getLogger(__name__)

Vector = np.ndarray
InputFn = Union[np.ndarray, Callable[[np.ndarray, float], np.ndarray]]

__all__ = [
    "INTEGRATORS",
    "euler_step",
    "rk4_step",
    "integrate_open_loop",
    "ClosedLoop",
    "build_closed_loop",
    "simulate",
]


def euler_step(model: SystemModel, x: Vector, u: Vector, dt: float) -> Vector:
    return x + dt * model.dynamics(x, u)


def rk4_step(model: SystemModel, x: Vector, u: Vector, dt: float) -> Vector:
    k1 = model.dynamics(x, u)
    k2 = model.dynamics(x + 0.5 * dt * k1, u)
    k3 = model.dynamics(x + 0.5 * dt * k2, u)
    k4 = model.dynamics(x + dt * k3, u)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


INTEGRATORS = {"rk4": rk4_step, "euler": euler_step}


def _stepper(name: str):
    try:
        return INTEGRATORS[name]
    except KeyError:
        raise ValueError(f"unknown integrator '{name}' (expected one of {', '.join(INTEGRATORS)})") from None


def _num_steps(t_final: float, dt: float) -> int:
    if not (dt > 0 and math.isfinite(dt)):
        raise ValueError(f"dt must be positive, got {dt}")
    if not t_final >= dt:
        raise ValueError(f"t_final ({t_final}) must be at least dt ({dt})")
    return int(round(t_final / dt))


def integrate_open_loop(model: SystemModel, x0: Sequence[float], u: InputFn, t_final: float,
                        dt: float, integrator: str = "rk4") -> Tuple[np.ndarray, np.ndarray]:
    """Integrate x' = f(x) + g(x) u with u constant or u(x, t) held per step.

    Returns (t, states) with states of shape (N + 1, n). No region checks.
    """
    step = _stepper(integrator)
    n_steps = _num_steps(t_final, dt)
    x = np.asarray(x0, dtype=float).copy()
    states = np.empty((n_steps + 1, x.size))
    states[0] = x
    for k in range(n_steps):
        uk = u(x, k * dt) if callable(u) else np.asarray(u, dtype=float)
        x = step(model, x, uk, dt)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(k + 1)
        states[k + 1] = x
    return dt * np.arange(n_steps + 1), states


# ----------------------- closed loop ---------------------------

@dataclass(frozen=True, eq=False)
class ClosedLoop:
    """Plant, the model the filter reasons about, and the maps between them."""
    plant: SystemModel
    filter_model: SystemModel
    channels: Tuple[OutputChannel, ...]
    project: Callable[[Vector], Vector]
    nominal: Callable[[Vector, float], Vector]
    actuate: Callable[[Vector, FilterDecision], Vector]
    target_outputs: Callable[[float], Vector]
    # declared box the plant is audited against; the filter's own channels when None
    audit_channels: Optional[Tuple[OutputChannel, ...]] = None

    @property
    def monitored(self) -> Tuple[OutputChannel, ...]:
        return self.audit_channels if self.audit_channels is not None else self.channels

    def decide(self, x: Vector, t: float) -> Tuple[Vector, FilterDecision]:
        """(plant input, filter decision) at plant state x."""
        xf = self.project(x)
        decision = closed_form_filter(self.channels, self.filter_model, xf, self.nominal(xf, t))
        return self.actuate(x, decision), decision


def _identity(x: Vector) -> Vector:
    return np.asarray(x, dtype=float)


def _apply_u_star(x: Vector, decision: FilterDecision) -> Vector:
    return decision.u_star


def build_closed_loop(scenario: Scenario) -> ClosedLoop:
    plant, filter_model = resolve_models(scenario.model, _drone_params(scenario))
    declared = tuple(build_channels(scenario, filter_model))
    channels, audit_channels = declared, None
    if scenario.model == DRONE_WITH_ROM and scenario.adapter.box_margin > 0:
        channels = tuple(shrink_channels(declared, scenario.adapter.box_margin))
        audit_channels = declared
    project = project_drone_to_rom if scenario.model == DRONE_WITH_ROM else _identity

    def target_outputs(t: float) -> Vector:
        xt = project(scenario.target_at(t))
        return np.array([o.y(xt) for o in filter_model.outputs])

    nom = scenario.nominal
    if scenario.model == PLANAR_DRONE:
        nominal = drone_cascade_controller(filter_model, scenario.target_at, nom)
    else:
        nominal = output_tracking_controller(filter_model, target_outputs, kp=nom.kp, kd=nom.kd)

    if scenario.model == DRONE_WITH_ROM:
        adapter = scenario.adapter

        def actuate(x: Vector, decision: FilterDecision) -> Vector:
            cmd = rom_to_drone_adapter(decision.u_star, x, adapter)
            return np.array([cmd.thrust, cmd.moment])
    else:
        actuate = _apply_u_star

    return ClosedLoop(plant=plant, filter_model=filter_model, channels=channels, project=project,
                      nominal=nominal, actuate=actuate, target_outputs=target_outputs,
                      audit_channels=audit_channels)


def _drone_params(scenario: Scenario) -> PlanarDroneParams:
    return PlanarDroneParams(**scenario.model_params)


class _TraceRecorder:
    """Row buffer for SimTrace; arrays are assembled once at the end."""

    def __init__(self, loop: ClosedLoop):
        self.loop = loop
        self.rows: List[tuple] = []
        self.sup = 0.0

    def record(self, t: float, x: Vector, u: Vector, decision: FilterDecision) -> None:
        xf = self.loop.project(x)
        evals = evaluate_channels(self.loop.monitored, xf)
        y = np.array([e.y for e in evals])
        y_d = self.loop.target_outputs(t)
        psi = np.concatenate([np.concatenate([e.psi_lower, e.psi_upper]) for e in evals])
        k_cbf = decision.k_cbf
        self.sup = max(self.sup, float(np.linalg.norm(k_cbf)))
        self.rows.append((t, x.copy(), y, y_d, u, decision.u_star, decision.k_d, k_cbf,
                          decision.slacks, psi, decision.lambdas, y - y_d, self.sup))

    def build(self, scenario: Scenario, dt: float, status: str = "complete", message: str = "",
              outside: bool = False) -> SimTrace:
        ch = self.loop.monitored
        cols = list(zip(*self.rows)) if self.rows else [[] for _ in range(13)]
        n, m = self.loop.plant.state_dim, len(ch)

        def stack(i: int, width: int) -> np.ndarray:
            return np.vstack(cols[i]) if self.rows else np.empty((0, width))

        return SimTrace(
            scenario=scenario.name,
            state_names=self.loop.plant.state_names,
            input_names=self.loop.filter_model.input_names,
            channel_names=tuple(c.name for c in ch),
            rel_degrees=tuple(c.rel_degree for c in ch),
            dt=dt,
            t=np.asarray(cols[0], dtype=float),
            states=stack(1, n),
            outputs=stack(2, m),
            targets=stack(3, m),
            u=stack(4, self.loop.plant.input_dim),
            u_star=stack(5, m),
            k_d=stack(6, m),
            k_cbf=stack(7, m),
            slacks=stack(8, 2 * m),
            psi=stack(9, sum(2 * c.rel_degree for c in ch)),
            lambdas=stack(10, 2 * m),
            errors=stack(11, m),
            sup_kcbf=np.asarray(cols[12], dtype=float),
            status=status,
            message=message,
            x0_outside_safe_set=outside,
            applied_input_names=() if self.loop.plant is self.loop.filter_model else self.loop.plant.input_names,
        )


def simulate(scenario: Scenario, loop: Optional[ClosedLoop] = None) -> SimTrace:
    """Run the filtered closed loop of `scenario`.

    Raises RegionError or DivergenceError carrying the partial trace in `.trace`.
    """
    loop = loop or build_closed_loop(scenario)
    step = _stepper(scenario.integrator)
    dt = float(scenario.dt)
    n_steps = _num_steps(scenario.t_final, dt)
    plant = loop.plant

    x = np.asarray(scenario.x0, dtype=float).copy()
    if x.size != plant.state_dim:
        raise ValueError(f"x0 has {x.size} entries, model '{plant.name}' needs {plant.state_dim}")
    if not np.all(np.isfinite(x)) or not plant.in_region(x):
        raise RegionError(x, detail="initial state")

    members = safe_set_membership(loop.channels, loop.project(x))
    outside = scenario.x0_outside_safe_set or not all(mb.member for mb in members)
    if outside:
        logger.warning("x0 of scenario '%s' lies outside the safe set (%s); invariance is not guaranteed",
                       scenario.name, ", ".join(mb.name for mb in members if not mb.member))

    logger.info("simulating '%s' (%s, %s, dt=%g, %d steps, setpoint switches at %s)", scenario.name,
                scenario.model, scenario.integrator, dt, n_steps, scenario.switch_times() or "none")
    rec = _TraceRecorder(loop)
    for k in range(n_steps + 1):
        t = k * dt
        try:
            u, decision = loop.decide(x, t)
        except RegionError as err:
            trace = rec.build(scenario, dt, status="region_exit", message=str(err), outside=outside)
            raise RegionError(x, detail=f"t={t:.6g}", trace=trace) from err
        rec.record(t, x, u, decision)
        if k == n_steps:
            break
        x_next = step(plant, x, u, dt)
        if not np.all(np.isfinite(x_next)):
            trace = rec.build(scenario, dt, status="diverged", message=f"non-finite state at step {k + 1}",
                              outside=outside)
            logger.info("aborting '%s': divergence at step %d", scenario.name, k + 1)
            raise DivergenceError(k + 1, trace=trace)
        if not plant.in_region(x_next):
            trace = rec.build(scenario, dt, status="region_exit", message=f"left valid region at step {k + 1}",
                              outside=outside)
            logger.info("aborting '%s': region exit at step %d", scenario.name, k + 1)
            raise RegionError(x_next, detail=f"step {k + 1}, t={(k + 1) * dt:.6g}", trace=trace)
        x = x_next

    trace = rec.build(scenario, dt, outside=outside)
    logger.info("finished '%s': %d rows, sup|k_cbf|=%.4g", scenario.name, trace.steps, rec.sup)
    return trace
