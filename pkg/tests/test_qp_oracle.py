import logging

import numpy as np
import pytest
from numpy.testing import assert_allclose

from boxcbf.errors import ConditioningError, InfeasibleQpError
from boxcbf.filter import closed_form_filter
from boxcbf.models import QpInstance
from boxcbf.qp_oracle import (
    build_qp_instance,
    candidate_active_sets,
    kkt_residuals,
    solve_active_set_enumeration,
)
from boxcbf.systems import sample_states

G = 9.81


@pytest.mark.parametrize("m,count", [(1, 3), (2, 9), (3, 27)])
def test_candidate_count(m, count):
    sets = list(candidate_active_sets(m))
    assert len(sets) == count
    assert len(set(sets)) == count
    for active in sets:
        channels = [j // 2 for j in active]
        assert len(channels) == len(set(channels))


def test_worked_example(di_channels, double_integrator):
    inst = build_qp_instance(di_channels, double_integrator, np.array([0.0, 1.0, 0.0, 0.0]), np.array([5.0, 0.0]))
    assert_allclose(inst.G, np.eye(2))
    sol = solve_active_set_enumeration(inst)
    assert_allclose(sol.u, [1.0, G - 1.0])
    assert_allclose(sol.lam, [0.0, 4.0, G - 1.0, 0.0])
    assert sol.active == frozenset({1, 2})
    assert sol.examined == 9
    assert sol.accepted >= 1
    assert kkt_residuals(inst, sol.u, sol.lam).worst() <= 1e-12


def test_general_weighting(drone, drone_channels, rng):
    # any SPD weight, not only the Gram matrix
    for x in sample_states(drone, rng, 30):
        A = rng.normal(size=(2, 2))
        W = A @ A.T + 0.5 * np.eye(2)
        k_d = rng.uniform(-20, 20, size=2)
        inst = build_qp_instance(drone_channels, drone, x, k_d, G=W)
        sol = solve_active_set_enumeration(inst)
        res = kkt_residuals(inst, sol.u, sol.lam)
        assert res.worst() <= 1e-8 * (1.0 + np.abs(sol.lam).max() + np.abs(inst.c).max())


def test_oracle_agrees_with_closed_form_multipliers(double_integrator, di_channels, rng):
    for x in sample_states(double_integrator, rng, 40):
        k_d = rng.uniform(-20, 20, size=2)
        sol = solve_active_set_enumeration(build_qp_instance(di_channels, double_integrator, x, k_d))
        d = closed_form_filter(di_channels, double_integrator, x, k_d)
        assert_allclose(sol.u, d.u_star, atol=1e-9)
        assert_allclose(sol.lam, d.lambdas, atol=1e-9)


def test_infeasible_instance():
    inst = QpInstance(G=np.eye(1), k_d=np.zeros(1), c=np.array([-1.0, -1.0]), D=np.array([[1.0], [-1.0]]))
    with pytest.raises(InfeasibleQpError) as exc:
        solve_active_set_enumeration(inst)
    assert exc.value.candidates == 3


def test_ill_conditioned_kkt():
    D = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    inst = QpInstance(G=np.diag([1.0, 1e-14]), k_d=np.zeros(2), c=np.zeros(4), D=D)
    with pytest.raises(ConditioningError) as exc:
        solve_active_set_enumeration(inst)
    assert exc.value.condition > exc.value.limit


def test_instance_validation():
    D = np.array([[1.0], [-1.0]])
    with pytest.raises(ValueError, match="symmetric"):
        QpInstance(G=np.array([[1.0, 0.5], [0.0, 1.0]]), k_d=np.zeros(2), c=np.zeros(4),
                   D=np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]))
    with pytest.raises(ValueError, match="positive definite"):
        QpInstance(G=-np.eye(1), k_d=np.zeros(1), c=np.zeros(2), D=D)
    with pytest.raises(ValueError, match="opposite-sign"):
        QpInstance(G=np.eye(1), k_d=np.zeros(1), c=np.zeros(2), D=np.array([[1.0], [1.0]]))
    with pytest.raises(ValueError, match="shapes"):
        QpInstance(G=np.eye(1), k_d=np.zeros(1), c=np.zeros(3), D=D)


def test_residuals_detect_suboptimal_point(di_channels, double_integrator):
    inst = build_qp_instance(di_channels, double_integrator, np.array([0.0, 1.0, 0.0, 0.0]), np.array([5.0, 0.0]))
    res = kkt_residuals(inst, inst.k_d, np.zeros(4))
    # k_d itself violates x upper and z lower
    assert res.primal == pytest.approx(G - 1.0)
    assert res.stationarity == 0.0


class TestOneDimensional:

    @staticmethod
    def _box(k_d):
        # u + 1 >= 0 and -u + 1 >= 0
        return QpInstance(G=np.eye(1), k_d=np.array([k_d]), c=np.array([1.0, 1.0]), D=np.array([[1.0], [-1.0]]))

    def test_interior(self):
        sol = solve_active_set_enumeration(self._box(0.0))
        assert_allclose(sol.u, [0.0])
        assert sol.active == frozenset()
        assert kkt_residuals(self._box(0.0), sol.u, sol.lam).worst() == 0.0

    def test_projection_onto_lower_face(self):
        inst = self._box(-3.0)
        sol = solve_active_set_enumeration(inst)
        assert_allclose(sol.u, [-1.0])
        assert_allclose(sol.lam, [2.0, 0.0])
        assert kkt_residuals(inst, sol.u, sol.lam).worst() <= 1e-10

    def test_distinct_near_optimal_candidates_warn(self, caplog):
        # lower row violated by 1e-11, inside the slack tolerance, with a shallow row d = 1e-3:
        # both the free point and the lower-face point are accepted at equal cost
        inst = QpInstance(G=np.eye(1), k_d=np.zeros(1), c=np.array([-1e-11, 1.0]), D=np.array([[1e-3], [-1e-3]]))
        with caplog.at_level(logging.WARNING, logger="boxcbf.qp_oracle"):
            sol = solve_active_set_enumeration(inst)
        assert sol.accepted == 2
        assert_allclose(sol.u, [0.0])
        assert "distinct near-optimal candidates" in caplog.text

    def test_unique_optimum_is_quiet(self, caplog):
        with caplog.at_level(logging.WARNING, logger="boxcbf.qp_oracle"):
            solve_active_set_enumeration(self._box(-3.0))
        assert caplog.records == []

    def test_negative_multiplier_flagged(self):
        inst = self._box(-3.0)
        res = kkt_residuals(inst, np.array([-1.0]), np.array([2.0, -0.5]))
        assert res.dual == pytest.approx(0.5)


def test_optimum_beats_feasible_samples(drone, drone_channels, rng):
    for x in sample_states(drone, rng, 5, box=np.array([[-2, 2], [0, 2], [-1, 1], [-3, 3], [-3, 3], [-3, 3]])):
        inst = build_qp_instance(drone_channels, drone, x, rng.uniform(-20, 20, size=2))
        sol = solve_active_set_enumeration(inst)
        candidates = sol.u + rng.uniform(-30, 30, size=(1000, 2))
        feasible = candidates[np.all(candidates @ inst.D.T + inst.c >= 0, axis=1)]
        assert all(sol.objective <= inst.objective(u) + 1e-12 for u in feasible)
