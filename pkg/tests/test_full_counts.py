"""Full-size randomized suites; the per-module tests run reduced counts of the same checks."""
import numpy as np
import pytest

from boxcbf.cli import MAX_GRAM_DEVIATION, MAX_KKT_RESIDUAL, MAX_PAIR_SUM_ERROR, MAX_REL_DEVIATION
from boxcbf.ecbf import compatibility_certificate
from boxcbf.eval.benchmark import run_equivalence_benchmark
from boxcbf.filter import closed_form_filter, gram_orthogonality_check
from boxcbf.systems import sample_states

pytestmark = pytest.mark.slow

DRONE_BOX = np.array([[-2, 2], [-1, 3], [-1.2, 1.2], [-3, 3], [-3, 3], [-3, 3]])


def test_gram_orthogonality_1000(drone):
    rng = np.random.default_rng(1000)
    for x in sample_states(drone, rng, 1000, box=DRONE_BOX):
        check = gram_orthogonality_check(drone, x)
        assert check.max_deviation <= 1e-10
        assert check.condition == pytest.approx(1.0 / abs(np.cos(x[2])), rel=1e-6)


def test_compatibility_1000_states(drone, drone_channels):
    rng = np.random.default_rng(1001)
    for x in sample_states(drone, rng, 1000):
        rep = compatibility_certificate(drone_channels, x, trials=10, rng=rng)
        assert rep.passed
        assert rep.min_feasible_slack > 0


def test_locally_lipschitz_1000(drone, drone_channels):
    rng = np.random.default_rng(1002)
    for x in sample_states(drone, rng, 1000, box=DRONE_BOX):
        k_d = rng.uniform(-20, 20, size=2)
        nominal = lambda z: k_d + 0.5 * z[[1, 2]]
        u0 = closed_form_filter(drone_channels, drone, x, nominal(x)).u_star
        direction = rng.normal(size=6)
        direction /= np.linalg.norm(direction)
        ratios = []
        for eps in (1e-5, 1e-6, 1e-7):
            xe = x + eps * direction
            ratios.append(np.linalg.norm(closed_form_filter(drone_channels, drone, xe, nominal(xe)).u_star - u0) / eps)
        assert np.all(np.isfinite(ratios))
        assert max(ratios) <= 10.0 * (1.0 + ratios[0])


@pytest.mark.parametrize("model", ["planar_drone", "double_integrator"])
def test_oracle_equivalence_10000(model):
    agg = run_equivalence_benchmark(model, 10_000, seed=0)["aggregate_metrics"]
    assert agg["samples"] == 10_000
    assert agg["max_deviation"] <= MAX_REL_DEVIATION
    assert agg["worst_kkt_closed_form"] <= MAX_KKT_RESIDUAL
    assert agg["worst_kkt_oracle"] <= MAX_KKT_RESIDUAL
    assert agg["max_gram_deviation"] <= MAX_GRAM_DEVIATION
    assert agg["max_pair_sum_error"] <= MAX_PAIR_SUM_ERROR
    assert agg["both_sides_events"] == 0
