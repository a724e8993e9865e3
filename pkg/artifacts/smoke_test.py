"""Lightweight smoke test for the boxcbf package.

Run: `python artifacts/smoke_test.py`

What it validates:
1. Modules import without errors
2. The closed-form filter matches the brute-force oracle on a handful of states
3. A short double-integrator run passes its invariance audit

Everything is offline and takes a few seconds.
"""
from __future__ import annotations
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from boxcbf import config  # noqa: E402,F401 - ensure accessible
from boxcbf.eval.benchmark import default_channels, evaluate_sample  # noqa: E402
from boxcbf.eval.invariance import audit_invariance  # noqa: E402
from boxcbf.scenario import parse_scenario  # noqa: E402
from boxcbf.sim import simulate  # noqa: E402
from boxcbf.systems import planar_drone_model, sample_states  # noqa: E402

rng = np.random.default_rng(42)
drone = planar_drone_model()
channels = default_channels(drone)
worst = 0.0
for x in sample_states(drone, rng, 10, box=np.array([[-2, 2], [-1, 3], [-1.2, 1.2], [-3, 3], [-3, 3], [-3, 3]])):
    row = evaluate_sample(channels, drone, x, rng.uniform(-20, 20, size=2))
    worst = max(worst, row["deviation"])
print(f"closed form vs oracle, 10 drone states: max relative deviation {worst:.3e}")
assert worst <= 1e-7, "closed form disagrees with the oracle"

SCENARIO = """\
name = smoke
model = double_integrator
channel.x.lower = -1
channel.x.upper = 1
channel.x.roots = -1, -1
channel.z.lower = 0
channel.z.upper = 2
channel.z.roots = -1, -1
setpoint.0.time = 0
setpoint.0.target = 1.5, 2.5, 0, 0
x0 = 0, 1, 0, 0
t_final = 3
dt = 0.005
"""
trace = simulate(parse_scenario(SCENARIO))
report = audit_invariance(trace)
print(f"smoke run: {trace.steps} rows, min h {report.min_h:.3e}, max |lambda| {np.abs(trace.lambdas).max():.3f}")
assert report.passed, report.failures

print("\nSmoke test passed.")
