import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from s2cubic.errors import ManifoldEscape, PoorConvergence, SingularQ
from s2cubic.ode_core import IvpSpec, integrate_ivp, log_reduction
from s2cubic.phase_plane import (Branch, FixedPointKind, classify_fixed_points, estimate_T_from_separatrix,
                                 extrapolate_inverse_q, find_fixed_point, saddle_minus_half, sms_jacobian,
                                 sms_rhs, syst1_rhs, tau_from_orbit, tau_orbit, trace_separatrix,
                                 write_curve_csv, write_fixed_points_json)


@pytest.mark.parametrize("q,p", [(1.0, 0.0), (0.0, 1.0), (0.0, -0.5), (-1.0, 0.0)])
def test_sms_equilibria(q, p):
    assert sms_rhs((q, p)) == (0.0, 0.0)


def test_syst1_values():
    assert syst1_rhs((1.0, 0.0)) == pytest.approx((0.0, 0.0))
    assert syst1_rhs((2.0, -3.0)) == pytest.approx((-3.0, 12.0))
    assert syst1_rhs((0.5, 0.0)) == pytest.approx((0.0, 2.625))


def test_syst1_parabola_consistency():
    qd, pd = syst1_rhs((2.0, -3.0))
    assert pd == pytest.approx(-2.0 * 2.0 * qd)


def test_syst1_singular():
    with pytest.raises(SingularQ):
        syst1_rhs((0.0, 0.3))


@given(st.floats(0.01, 3), st.floats(-5, 5))
def test_syst1_reflection(q, p):
    a = syst1_rhs((q, p))
    b = syst1_rhs((-q, p))
    # (q, t) -> (-q, -t): dq/dt keeps its value, dp/dt flips
    assert b[0] == pytest.approx(a[0])
    assert b[1] == pytest.approx(-a[1])


def test_invariant_parabola():
    rng = np.random.default_rng(2)
    q = rng.uniform(-3.0, 3.0, 1000)
    p = 1.0 - q * q
    qd, pd = sms_rhs((q, p))
    assert np.max(np.abs(pd + 2.0 * q * qd)) <= 1e-12


def test_four_fixed_points():
    pts = classify_fixed_points()
    assert len(pts) == 4
    for fp in pts:
        assert np.hypot(*sms_rhs((fp.location.q, fp.location.p))) <= 1e-12
        assert (fp.kind is FixedPointKind.SADDLE) == (fp.eigenvalues[0] * fp.eigenvalues[1] < 0)
        for v in fp.eigenvectors:
            assert np.linalg.norm(v) == pytest.approx(1.0)


@pytest.mark.parametrize("loc,kind,eig", [
    ((1.0, 0.0), FixedPointKind.NODE, (-2.0, -4.0)),
    ((-1.0, 0.0), FixedPointKind.NODE, (-2.0, -4.0)),
    ((0.0, 1.0), FixedPointKind.SADDLE, (1.0, -3.0)),
    ((0.0, -0.5), FixedPointKind.SADDLE, (3.0, -0.5)),
])
def test_fixed_point_classification(loc, kind, eig):
    fp = find_fixed_point(*loc)
    assert (fp.location.q, fp.location.p) == pytest.approx(loc, abs=1e-12)
    assert fp.kind is kind
    assert sorted(fp.eigenvalues) == pytest.approx(sorted(eig), abs=1e-10)


def test_jacobian_matches_finite_differences():
    for q, p in [(0.3, -0.2), (1.0, 0.0), (0.0, 1.0)]:
        h = 1e-6
        num = np.empty((2, 2))
        for j, (dq, dp) in enumerate([(h, 0.0), (0.0, h)]):
            a = np.array(sms_rhs((q + dq, p + dp)))
            b = np.array(sms_rhs((q - dq, p - dp)))
            num[:, j] = (a - b) / (2 * h)
        assert np.allclose(num, sms_jacobian(q, p), atol=1e-8)


def test_unstable_branch_reaches_node():
    curve = trace_separatrix(find_fixed_point(0.0, 1.0), Branch.UNSTABLE_POS)
    assert np.hypot(curve.q[-1] - 1.0, curve.p[-1]) <= 1e-6


def test_stable_branch_below_parabola():
    curve = trace_separatrix(saddle_minus_half(), Branch.STABLE_POS, q_max=50.0)
    q = curve.q[curve.q > 1e-3]
    assert curve.q_range[1] == pytest.approx(50.0)
    assert np.all(curve.p_at(q) < 1.0 - q * q)


def test_wrong_branch_escapes():
    with pytest.raises(ManifoldEscape):
        trace_separatrix(saddle_minus_half(), Branch.STABLE_NEG, q_max=50.0)


def test_trace_needs_saddle():
    with pytest.raises(ValueError):
        trace_separatrix(find_fixed_point(1.0, 0.0), Branch.STABLE_POS)


def test_extrapolation_exact_on_parabola():
    q = np.linspace(10.0, 50.0, 41)
    p = 1.0 - q * q
    est = extrapolate_inverse_q(q, -(p + q * q) / q)
    assert est.value == pytest.approx(0.0, abs=1e-12)
    assert tau_from_orbit((q, p)).value == pytest.approx(0.0, abs=1e-12)


def test_separatrix_estimate_matches_fixture(T):
    est = estimate_T_from_separatrix(100.0)
    assert est.value == pytest.approx(T, abs=1e-4)
    assert est.value > 0


def test_separatrix_window_guard():
    with pytest.raises(PoorConvergence):
        estimate_T_from_separatrix(5.0)


def test_separatrix_gives_minus_T(T):
    curve = trace_separatrix(saddle_minus_half(), Branch.STABLE_POS, q_max=100.0)
    assert tau_from_orbit(curve).value == pytest.approx(-T, abs=1e-4)


def test_tau_recovered_from_log_reduction():
    traj = integrate_ivp(IvpSpec(0.05, (0.0, 1.0)))
    rows = log_reduction(traj, np.geomspace(2e-3, 2e-2, 30))
    assert tau_from_orbit(rows[:, 1:], tol=1e-3).value == pytest.approx(0.05, abs=1e-3)


@pytest.mark.parametrize("tau", [0.02, 0.1])
def test_orbit_correspondence(tau):
    traj = integrate_ivp(IvpSpec(tau, (0.0, 3.0)))
    rows = log_reduction(traj, np.linspace(0.05, 0.45, 30))
    orbit = tau_orbit(tau, q_min=2.0)
    assert np.max(np.abs(orbit.p_at(rows[:, 1]) - rows[:, 2])) <= 1e-6


def test_monotone_ordering():
    qs = np.linspace(10.0, 100.0, 10)
    lo = tau_orbit(0.1).p_at(qs)
    hi = tau_orbit(0.3).p_at(qs)
    assert np.all(hi > lo)


def test_exports(tmp_path):
    write_fixed_points_json(tmp_path / "fp.json")
    data = json.loads((tmp_path / "fp.json").read_text())
    assert len(data["fixed_points"]) == 4
    write_curve_csv(tau_orbit(0.2), tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().startswith("q,p\n")
