import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from s2cubic.errors import NonPositiveX, SingularDerivative
from s2cubic.ode_core import (IvpSpec, JetState, TerminationKind, integrate_ivp, integrate_jet,
                              log_reduction, rhs_third_order, trajectory_manifest, write_trajectory_csv)


def test_rhs_exp_jet():
    assert rhs_third_order(JetState(0.0, 1.0, 1.0, 1.0)) == pytest.approx(1.0, abs=1e-15)


def test_rhs_cosh_jet_away_from_stationary_point():
    s = JetState(1.0, math.cosh(1.0), math.sinh(1.0), math.cosh(1.0))
    assert rhs_third_order(s) == pytest.approx(math.sinh(1.0), rel=1e-14)


def test_rhs_sinh_jet():
    assert rhs_third_order(JetState(0.0, 0.0, 1.0, 0.0)) == pytest.approx(1.0, abs=1e-15)


def test_rhs_rejects_vanishing_derivative():
    with pytest.raises(SingularDerivative):
        rhs_third_order(JetState(0.0, 1.0, 0.0, 1.0))


def test_jet_rejects_non_finite():
    with pytest.raises(ValueError):
        JetState(0.0, math.nan, 1.0, 0.0)


@pytest.mark.parametrize("fn", [
    (np.exp, np.exp, np.exp, np.exp),
    (np.cosh, np.sinh, np.cosh, np.sinh),
    (np.sinh, np.cosh, np.sinh, np.cosh),
])
def test_exact_solutions_random_times(fn):
    x, x1, x2, x3 = fn
    rng = np.random.default_rng(1)
    t = rng.uniform(-3.0, 3.0, 100)
    t = t[np.abs(x1(t)) >= 1e-6]
    got = np.array([rhs_third_order(JetState(tt, x(tt), x1(tt), x2(tt))) for tt in t])
    assert np.max(np.abs(got - x3(t)) / np.abs(x3(t))) <= 1e-12


@given(st.floats(-5, 5), st.floats(0.05, 5), st.floats(-5, 5), st.sampled_from([2.0, -3.0, 0.5]))
def test_scaling_covariance(x, x1, x2, alpha):
    base = rhs_third_order(JetState(0.0, x, x1, x2))
    scaled = rhs_third_order(JetState(0.0, alpha * x, alpha * x1, alpha * x2))
    assert scaled == pytest.approx(alpha * base, rel=1e-12, abs=1e-12)


def test_ivp_spec_validation():
    with pytest.raises(ValueError):
        IvpSpec(0.0, (1.0, 2.0))
    with pytest.raises(ValueError):
        IvpSpec(0.0, rel_tol=0.0)


def test_tau_zero_is_sinh():
    traj = integrate_ivp(IvpSpec(0.0, (-5.0, 5.0)))
    t = np.linspace(-5.0, 5.0, 1001)
    assert traj.termination.kind is TerminationKind.COMPLETED
    assert np.max(np.abs(traj(t)[:, 0] - np.sinh(t))) <= 1e-8


def test_small_tau_stays_positive():
    traj = integrate_ivp(IvpSpec(0.01, (0.0, 30.0)))
    assert traj.termination.kind is TerminationKind.COMPLETED
    _, y = traj.node_arrays()
    assert np.all(y[:, 1] > 0)


def test_beyond_T_breaks_down(T):
    traj = integrate_ivp(IvpSpec(T + 0.05, (-40.0, 40.0)))
    assert traj.termination.kind in (TerminationKind.DERIVATIVE_ZERO, TerminationKind.BLOWUP)
    assert math.isfinite(traj.termination.t)


def test_derivative_zero_event_has_small_slope(T):
    traj = integrate_ivp(IvpSpec(T + 0.05, (-40.0, 40.0)))
    if traj.termination.kind is TerminationKind.DERIVATIVE_ZERO:
        x, x1, _ = traj([traj.termination.t])[0]
        assert abs(x1) <= 1e-3 * max(1.0, abs(x))


def test_nodes_increasing_and_interpolant_continuous():
    traj = integrate_ivp(IvpSpec(0.3, (-6.0, 6.0)))
    t, y = traj.node_arrays()
    assert np.all(np.diff(t) > 0)
    inner = t[1:-1]
    left = traj(inner - 1e-12)
    right = traj(inner + 1e-12)
    assert np.max(np.abs(left - right) / np.maximum(1.0, np.abs(y[1:-1]))) <= 1e-9


def test_interpolated_residual_small():
    traj = integrate_ivp(IvpSpec(0.3, (-4.0, 4.0)))
    t = np.linspace(-4.0, 4.0, 777)
    x = traj(t)
    scale = np.maximum(1.0, np.abs(x).sum(axis=1) ** 2)
    assert np.max(np.abs(traj.residual(t)) / scale) <= 1e-6


def test_time_translation_invariance():
    traj = integrate_ivp(IvpSpec(0.2, (0.0, 6.0)))
    t0 = 2.0
    jet = JetState(t0, *traj([t0])[0])
    tail = integrate_jet(jet, 6.0)
    t = np.linspace(t0, 6.0, 50)
    a, b = traj(t), tail(t)
    assert np.max(np.abs(a - b) / np.maximum(1.0, np.abs(a))) <= 1e-9


@pytest.mark.parametrize("tau", [0.1, 0.35])
def test_reflection_symmetry(tau):
    plus = integrate_ivp(IvpSpec(tau, (-5.0, 5.0)))
    minus = integrate_ivp(IvpSpec(-tau, (-5.0, 5.0)))
    t = np.linspace(-5.0, 5.0, 201)
    a = plus(t)[:, 0]
    b = -minus(-t)[:, 0]
    assert np.max(np.abs(a - b) / np.maximum(1.0, np.abs(a))) <= 1e-9


def test_log_reduction_exp_node():
    traj = integrate_jet(JetState(0.0, 1.0, 1.0, 1.0), 3.0)
    rows = log_reduction(traj)
    assert np.allclose(rows[:, 1], 1.0, atol=1e-10)
    assert np.allclose(rows[:, 2], 0.0, atol=1e-9)


def test_log_reduction_sinh_on_parabola():
    traj = integrate_ivp(IvpSpec(0.0, (0.0, 5.0)))
    rows = log_reduction(traj, np.linspace(0.1, 5.0, 200))
    assert np.max(np.abs(rows[:, 2] + rows[:, 1] ** 2 - 1.0)) <= 1e-9


def test_log_reduction_cosh_inside():
    traj = integrate_jet(JetState(0.5, math.cosh(0.5), math.sinh(0.5), math.cosh(0.5)), 4.0)
    rows = log_reduction(traj)
    assert np.all(np.abs(rows[:, 1]) < 1.0)
    assert np.max(np.abs(rows[:, 2] + rows[:, 1] ** 2 - 1.0)) <= 1e-9


def test_log_reduction_rejects_non_positive_x():
    traj = integrate_ivp(IvpSpec(0.0, (-2.0, 2.0)))
    with pytest.raises(NonPositiveX):
        log_reduction(traj)


def test_csv_and_manifest(tmp_path):
    traj = integrate_ivp(IvpSpec(0.1, (-1.0, 1.0)))
    path = tmp_path / "traj.csv"
    write_trajectory_csv(traj, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x,x1,x2"
    man = trajectory_manifest(traj)
    assert man["termination"]["kind"] == "completed"
    assert man["n_nodes"] == len(lines) - 1
