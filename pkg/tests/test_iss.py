import numpy as np
import pytest
from numpy.testing import assert_allclose

from boxcbf.errors import InvalidCertificateError
from boxcbf.eval.iss import check_iss_bound, pd_error_dynamics, pd_tracking_certificate, validate_certificate
from boxcbf.models import IssCertificate, SimTrace
from boxcbf.sim import build_closed_loop

P_44 = np.array([[1.125, 0.125], [0.125, 0.15625]])


def _synthetic_trace(t, errors, targets, k_cbf):
    """Double-integrator trace at rest with prescribed errors and filter corrections."""
    n = t.size
    outputs = errors + targets
    states = np.column_stack([outputs, np.zeros((n, 2))])
    zeros = np.zeros((n, 2))
    return SimTrace(
        scenario="synthetic", state_names=("x", "z", "xdot", "zdot"), input_names=("ax", "az"),
        channel_names=("x", "z"), rel_degrees=(2, 2), dt=float(t[1] - t[0]), t=t, states=states,
        outputs=outputs, targets=targets, u=zeros, u_star=zeros, k_d=zeros, k_cbf=k_cbf,
        slacks=np.zeros((n, 4)), psi=np.zeros((n, 8)), lambdas=np.zeros((n, 4)), errors=errors,
        sup_kcbf=np.maximum.accumulate(np.linalg.norm(k_cbf, axis=1)),
    )


@pytest.fixture(scope="module")
def cert(double_integrator):
    return pd_tracking_certificate(double_integrator, lambda t: np.zeros(2), kp=4.0, kd=4.0)


def test_lyapunov_solution(cert):
    assert_allclose(cert.P, P_44, atol=1e-12)
    assert cert.rho == pytest.approx(1.025)
    PE = P_44[:, 1]
    assert cert.sigma == pytest.approx(0.9 / (8.0 * PE @ PE))
    assert 0 < cert.gamma < 1.0
    assert cert.grid_size == 41 * 41
    assert max(cert.residuals.values()) <= 1e-12


def test_gains_must_be_positive():
    with pytest.raises(ValueError):
        pd_error_dynamics(4.0, 0.0)


def test_derate_bounds(double_integrator):
    with pytest.raises(ValueError, match="derate"):
        pd_tracking_certificate(double_integrator, lambda t: np.zeros(2), 4.0, 4.0, derate=1.5)


def test_validation_rejects_optimistic_rates(cert):
    A = pd_error_dynamics(4.0, 4.0)
    res = validate_certificate(cert.P, A, cert.rho, 10.0, cert.sigma)
    assert res["dissipation"] > 0
    res = validate_certificate(cert.P, A, 2.0 * cert.rho, cert.gamma, cert.sigma)
    assert res["lower"] > 0


def test_value_is_quadratic_form(cert):
    x = np.array([0.5, -0.2, 1.0, 0.3])
    xi = np.array([[0.5, 1.0], [-0.2, 0.3]])
    assert cert.value(x, 0.0) == pytest.approx(sum(v @ P_44 @ v for v in xi))


def test_steady_offset_within_gain(cert):
    # constant correction k gives the steady error k / kp
    t = np.linspace(0.0, 2.0, 201)
    k = np.tile([0.8, -0.4], (t.size, 1))
    errors = k / 4.0
    report = check_iss_bound(_synthetic_trace(t, errors, np.zeros_like(k), k), cert)
    assert report.passed
    assert report.segments == 1
    assert np.all(report.bound >= report.error_norm)


def test_bound_restarts_per_segment(double_integrator):
    cert = pd_tracking_certificate(double_integrator, lambda t: np.array([1.0, 0.0]) if t >= 0.995 else np.zeros(2),
                                   kp=4.0, kd=4.0)
    t = np.linspace(0.0, 2.0, 201)
    targets = np.zeros((t.size, 2))
    targets[100:] = [1.0, 0.0]
    # critically damped PD response from rest, e(s) = -(1 + 2s) e^-2s
    s = t[100:] - t[100]
    errors = np.zeros((t.size, 2))
    errors[100:, 0] = -(1.0 + 2.0 * s) * np.exp(-2.0 * s)
    report = check_iss_bound(_synthetic_trace(t, errors, targets, np.zeros((t.size, 2))), cert)
    assert report.segments == 2
    assert report.passed, report.max_violation
    # the new segment starts from its own V(t_s)
    assert report.bound[100] == pytest.approx(np.sqrt(P_44[0, 0] / 1.025))
    assert_allclose(report.bound[:100], 0.0)


def test_violation_detected(cert):
    t = np.linspace(0.0, 2.0, 201)
    errors = np.zeros((t.size, 2))
    errors[150] = [0.5, 0.0]
    report = check_iss_bound(_synthetic_trace(t, errors, np.zeros((t.size, 2)), np.zeros((t.size, 2))), cert)
    assert not report.passed
    assert report.worst_step == 150
    assert report.max_violation == pytest.approx(0.5)


def test_invalid_certificate_refused(cert):
    bad = IssCertificate(P=cert.P, rho=cert.rho, gamma=cert.gamma, sigma=cert.sigma, kp=4.0, kd=4.0,
                         value=cert.value, residuals={"lower": 0.1, "dissipation": 0.0})
    t = np.linspace(0.0, 1.0, 11)
    z = np.zeros((t.size, 2))
    with pytest.raises(InvalidCertificateError):
        check_iss_bound(_synthetic_trace(t, z, z, z), bad)


def test_rom_closed_loop_tracking_bound(rom_vb_scenario, rom_vb_trace):
    loop = build_closed_loop(rom_vb_scenario)
    nom = rom_vb_scenario.nominal
    cert = pd_tracking_certificate(loop.filter_model, loop.target_outputs, nom.kp, nom.kd)
    report = check_iss_bound(rom_vb_trace, cert)
    assert report.segments == 4
    assert report.passed, report.max_violation
    assert report.bounded
