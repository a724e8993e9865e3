"""Bundled dynamical systems, nominal controllers and the RoM adapter.

Models
------
planar_drone       x = (x, z, theta, xd, zd, thetad), u = (F, M), outputs (z, theta)
double_integrator  x = (x, z, xd, zd), u = (ax, az), outputs (x, z)
drone_with_rom     planar drone plant filtered through the double integrator

Drone parameters are normalized (unit mass and inertia).
"""
from __future__ import annotations
from typing import Callable, Dict, Optional, Sequence, Tuple
import logging
import math

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .ecbf import decoupling_matrix
from .errors import ChannelConfigError, SamplingError
from .models import (
    AdapterCommand,
    NominalSpec,
    OutputChannelEvaluator,
    PlanarDroneParams,
    RomAdapterParams,
    SystemModel,
)

logger = logging.getLogger(__name__)

TargetFn = Callable[[float], np.ndarray]
Controller = Callable[[np.ndarray, float], np.ndarray]

PLANAR_DRONE = "planar_drone"
DOUBLE_INTEGRATOR = "double_integrator"
DRONE_WITH_ROM = "drone_with_rom"
MODEL_NAMES = (PLANAR_DRONE, DOUBLE_INTEGRATOR, DRONE_WITH_ROM)

__all__ = [
    "PLANAR_DRONE",
    "DOUBLE_INTEGRATOR",
    "DRONE_WITH_ROM",
    "MODEL_NAMES",
    "planar_drone_model",
    "double_integrator_model",
    "rom_to_drone_adapter",
    "project_drone_to_rom",
    "resolve_models",
    "output_tracking_controller",
    "drone_cascade_controller",
    "sample_states",
]


# ----------------------- planar drone --------------------------

def planar_drone_model(params: Optional[PlanarDroneParams] = None) -> SystemModel:
    p = params or PlanarDroneParams()
    g = p.gravity
    limit = math.pi / 2 - p.theta_margin

    def in_region(x: np.ndarray) -> bool:
        return bool(abs(x[2]) <= limit)

    def drift(x: np.ndarray) -> np.ndarray:
        return np.array([x[3], x[4], x[5], 0.0, -g, 0.0])

    def control_matrix(x: np.ndarray) -> np.ndarray:
        G = np.zeros((6, 2))
        G[3, 0] = -math.sin(x[2])
        G[4, 0] = math.cos(x[2])
        G[5, 1] = 1.0
        return G

    height = OutputChannelEvaluator(
        name="z",
        rel_degree=2,
        y=lambda x: x[1],
        lie_f_chain=lambda x: np.array([x[4], -g]),
        b_row=lambda x: np.array([math.cos(x[2]), 0.0]),
        in_region=in_region,
    )
    attitude = OutputChannelEvaluator(
        name="theta",
        rel_degree=2,
        y=lambda x: x[2],
        lie_f_chain=lambda x: np.array([x[5], 0.0]),
        b_row=lambda x: np.array([0.0, 1.0]),
        in_region=in_region,
    )
    box = np.array([
        [-2.0, 2.0],
        [-1.0, 3.0],
        [-limit, limit],
        [-3.0, 3.0],
        [-3.0, 3.0],
        [-3.0, 3.0],
    ])
    return SystemModel(
        name=PLANAR_DRONE,
        state_dim=6,
        input_dim=2,
        drift=drift,
        control_matrix=control_matrix,
        outputs=(height, attitude),
        in_region=in_region,
        state_names=("x", "z", "theta", "xdot", "zdot", "thetadot"),
        input_names=("F", "M"),
        sample_box=box,
        params=p,
    )


# ----------------------- double integrator ---------------------

def double_integrator_model(params: Optional[PlanarDroneParams] = None) -> SystemModel:
    """Planar double integrator with gravity; shares `gravity` with the drone it stands in for."""
    p = params or PlanarDroneParams()
    g = p.gravity
    G = np.vstack([np.zeros((2, 2)), np.eye(2)])

    def drift(x: np.ndarray) -> np.ndarray:
        return np.array([x[2], x[3], 0.0, -g])

    horizontal = OutputChannelEvaluator(
        name="x",
        rel_degree=2,
        y=lambda x: x[0],
        lie_f_chain=lambda x: np.array([x[2], 0.0]),
        b_row=lambda x: np.array([1.0, 0.0]),
    )
    vertical = OutputChannelEvaluator(
        name="z",
        rel_degree=2,
        y=lambda x: x[1],
        lie_f_chain=lambda x: np.array([x[3], -g]),
        b_row=lambda x: np.array([0.0, 1.0]),
    )
    box = np.array([[-2.0, 2.0], [-1.0, 3.0], [-3.0, 3.0], [-3.0, 3.0]])
    return SystemModel(
        name=DOUBLE_INTEGRATOR,
        state_dim=4,
        input_dim=2,
        drift=drift,
        control_matrix=lambda x: G.copy(),
        outputs=(horizontal, vertical),
        state_names=("x", "z", "xdot", "zdot"),
        input_names=("ax", "az"),
        sample_box=box,
        params=p,
    )


# ----------------------- RoM adapter ---------------------------

def rom_to_drone_adapter(v: Sequence[float], drone_state: np.ndarray,
                         params: Optional[RomAdapterParams] = None) -> AdapterCommand:
    """Thrust and moment realizing a filtered RoM acceleration command v on the drone.

    F is the left pseudo-inverse of the thrust direction (-sin theta, cos theta)
    applied to v. The desired lean satisfies (-sin theta_d, cos theta_d) ~ v,
    which with x'' = -F sin theta gives theta_d = atan2(-v1, v2).
    """
    p = params or RomAdapterParams()
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != 2 or not np.all(np.isfinite(v)):
        raise ValueError(f"RoM command must be a finite 2-vector, got {v}")
    theta, theta_dot = float(drone_state[2]), float(drone_state[5])
    thrust = -v[0] * math.sin(theta) + v[1] * math.cos(theta)
    theta_d = 0.0 if v[0] == 0.0 and v[1] == 0.0 else math.atan2(-v[0], v[1])
    moment = p.kp_theta * (theta_d - theta) - p.kd_theta * theta_dot
    return AdapterCommand(thrust=thrust, moment=moment, theta_d=theta_d)


def project_drone_to_rom(x: np.ndarray) -> np.ndarray:
    """(x, z, theta, xd, zd, thetad) -> (x, z, xd, zd)."""
    return np.asarray(x, dtype=float)[[0, 1, 3, 4]]


def resolve_models(name: str, params: Optional[PlanarDroneParams] = None) -> Tuple[SystemModel, SystemModel]:
    """(plant, filter model) for a bundled model name."""
    if name == PLANAR_DRONE:
        m = planar_drone_model(params)
        return m, m
    if name == DOUBLE_INTEGRATOR:
        m = double_integrator_model(params)
        return m, m
    if name == DRONE_WITH_ROM:
        return planar_drone_model(params), double_integrator_model(params)
    raise ChannelConfigError(f"unknown model '{name}' (expected one of {', '.join(MODEL_NAMES)})")


# ----------------------- nominal controllers -------------------

def _io_linearizing(model: SystemModel, x: np.ndarray, nu: np.ndarray) -> np.ndarray:
    # k_d = B^{-1} (nu - L_f^2 y)
    B, _ = decoupling_matrix(model, x)
    top = np.array([np.asarray(o.lie_f_chain(x), dtype=float)[-1] for o in model.outputs])
    return lu_solve(lu_factor(B), nu - top)


def output_tracking_controller(model: SystemModel, target_outputs: TargetFn,
                               kp: float = 4.0, kd: float = 4.0) -> Controller:
    """PD tracking of piecewise-constant output targets by input-output linearization.

    Requires relative degree two on every output; y_d' = y_d'' = 0 between switches.
    """
    if any(o.rel_degree != 2 for o in model.outputs):
        raise ChannelConfigError(f"output tracking needs relative degree 2 on every output of '{model.name}'")

    def controller(x: np.ndarray, t: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.array([o.y(x) for o in model.outputs])
        ydot = np.array([np.asarray(o.lie_f_chain(x), dtype=float)[0] for o in model.outputs])
        e = y - np.asarray(target_outputs(t), dtype=float)
        return _io_linearizing(model, x, -kp * e - kd * ydot)
    return controller


def drone_cascade_controller(model: SystemModel, target_state: TargetFn,
                             spec: Optional[NominalSpec] = None) -> Controller:
    """Setpoint controller for the planar drone.

    The outer loop turns horizontal error into a desired lean, the inner loop
    tracks (z, theta_d) through the decoupling matrix.
    """
    s = spec or NominalSpec()
    g = model.params.gravity if model.params is not None else 9.81

    def controller(x: np.ndarray, t: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        target = np.asarray(target_state(t), dtype=float)
        a_x = -s.kp_x * (x[0] - target[0]) - s.kd_x * x[3]
        a_z = -s.kp * (x[1] - target[1]) - s.kd * x[4]
        theta_d = float(np.clip(math.atan2(-a_x, a_z + g), -s.theta_cmd_max, s.theta_cmd_max))
        nu = np.array([a_z, -s.kp * (x[2] - theta_d) - s.kd * x[5]])
        return _io_linearizing(model, x, nu)
    return controller


# ----------------------- sampling ------------------------------

def sample_states(model: SystemModel, rng: np.random.Generator, n: int,
                  include_boundary: bool = False, box: Optional[np.ndarray] = None,
                  max_attempts: Optional[int] = None) -> np.ndarray:
    """Uniform rejection sampling of valid-region states from the model's sample box.

    With `include_boundary`, every tenth sample has one coordinate (cycling
    through the state) pinned to an edge of the box.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    box = np.asarray(box if box is not None else model.sample_box, dtype=float)
    if box.shape != (model.state_dim, 2):
        raise SamplingError(0, 0, f"model '{model.name}' has no usable sample box")
    lo, hi = box[:, 0], box[:, 1]
    limit = max_attempts if max_attempts is not None else 100 * max(n, 1)
    out = np.empty((n, model.state_dim))
    attempts = rejected = 0
    k = 0
    while k < n:
        if attempts >= limit:
            raise SamplingError(attempts, rejected,
                                f"only {k}/{n} states of '{model.name}' fell in the valid region")
        attempts += 1
        x = lo + (hi - lo) * rng.random(model.state_dim)
        if include_boundary and k % 10 == 0:
            coord = (k // 10) % model.state_dim
            x[coord] = hi[coord] if rng.random() < 0.5 else lo[coord]
        if not model.in_region(x):
            rejected += 1
            continue
        out[k] = x
        k += 1
    if rejected:
        logger.info("sampled %d states of %s (%d rejected)", n, model.name, rejected)
    return out
