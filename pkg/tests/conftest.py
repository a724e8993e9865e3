"""Shared fixtures for the boxcbf test suite."""
from __future__ import annotations
from pathlib import Path

import numpy as np
import pytest

from boxcbf import config
from boxcbf.models import OutputChannel, PlanarDroneParams
from boxcbf.systems import double_integrator_model, planar_drone_model

SCENARIOS = config.SCENARIO_DIR


def make_channels(model, table):
    """OutputChannels from {output name: (lower, upper, roots)}."""
    return [OutputChannel(ev, table[ev.name][0], table[ev.name][1], np.array(table[ev.name][2], dtype=float))
            for ev in model.outputs]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def drone():
    return planar_drone_model(PlanarDroneParams())


@pytest.fixture(scope="session")
def double_integrator():
    return double_integrator_model()


@pytest.fixture(scope="session")
def drone_channels(drone):
    return make_channels(drone, {"z": (0.5, 1.5, (-1.0, -1.0)), "theta": (-1.0, 1.0, (-1.0, -1.0))})


@pytest.fixture(scope="session")
def di_channels(double_integrator):
    return make_channels(double_integrator, {"x": (-1.0, 1.0, (-1.0, -1.0)), "z": (0.0, 2.0, (-1.0, -1.0))})


@pytest.fixture(scope="session")
def scenario_dir() -> Path:
    return SCENARIOS


@pytest.fixture(autouse=True)
def _no_seed_override(monkeypatch):
    monkeypatch.delenv("BOXCBF_SEED", raising=False)


@pytest.fixture(scope="session")
def drone_va_trace(scenario_dir):
    from boxcbf.scenario import load_scenario
    from boxcbf.sim import simulate
    return simulate(load_scenario(scenario_dir / "drone_va.cfg"))


@pytest.fixture(scope="session")
def drone_rom_vb_scenario(scenario_dir):
    from boxcbf.scenario import load_scenario
    return load_scenario(scenario_dir / "drone_rom_vb.cfg")


@pytest.fixture(scope="session")
def drone_rom_vb_trace(drone_rom_vb_scenario):
    from boxcbf.sim import simulate
    return simulate(drone_rom_vb_scenario)


@pytest.fixture(scope="session")
def rom_vb_scenario(scenario_dir):
    from boxcbf.scenario import load_scenario
    return load_scenario(scenario_dir / "rom_vb.cfg")


@pytest.fixture(scope="session")
def rom_vb_trace(rom_vb_scenario):
    from boxcbf.sim import simulate
    return simulate(rom_vb_scenario)


ROM_TEXT = """\
name = tiny
model = double_integrator
channel.x.lower = -1
channel.x.upper = 1
channel.x.roots = -1, -1
channel.z.lower = 0
channel.z.upper = 2
channel.z.roots = -1, -1
setpoint.0.time = 0
setpoint.0.target = 1.5, 2.5, 0, 0
x0 = {x0}
t_final = {t_final}
dt = {dt}
"""


def rom_text(x0="0, 1, 0, 0", t_final=1.0, dt=0.01, extra=""):
    """Small double-integrator scenario used across the suite."""
    return ROM_TEXT.format(x0=x0, t_final=t_final, dt=dt) + extra
