import math

import numpy as np
import pytest

from s2cubic.errors import ChartMismatch, DegenerateDenominator, DegenerateDerivative, DomainError, NonPositiveLambda
from s2cubic.integral import CotangentState
from s2cubic.metric import (Chart, Family, HamiltonianSpec, b_bounds, b_bounds_via_phi, build_metric, build_psi,
                            conformal_factor, f_laplacian_residual, gaussian_curvature, hamiltonian_eval,
                            lambda_scan, polar_form, pole_smoothness_check, xi_ode_residual, xi_second)

# (min, max) of psi^2 - psi'^2 at tau = T/2; equal to (-2 cos 40deg, -2 cos 80deg)
BOUNDS_HALF_T = (-1.5320888862616375, -0.34729635529752434)


def spec_b(tau, b):
    return HamiltonianSpec(Family.B, tau=tau, b=b)


# ---------------------------------------------------------------------------
# profiles

def test_psi_sinh():
    prof = build_psi(0.0)
    y = np.linspace(-5.0, 5.0, 401)
    v = prof(y)
    assert np.max(np.abs(v[:, 0] - np.sinh(y))) <= 1e-8
    assert np.max(np.abs(v[:, 1] - np.cosh(y)) / np.cosh(y)) <= 1e-8


def test_psi_far_field_sinh():
    prof = build_psi(0.0)
    y = np.array([-11.0, -8.0, 8.0, 11.0])
    assert np.allclose(prof(y)[:, 0], np.sinh(y), rtol=1e-8, atol=0)


def test_psi_initial_values(T):
    prof = build_psi(0.3 * T)
    psi, psi1, psi2 = prof(np.array([0.0]))[0]
    assert abs(psi) <= 1e-12 and abs(psi1 - 1.0) <= 1e-12 and abs(psi2 - 0.3 * T) <= 1e-12


def test_psi_derivative_positive(T):
    prof = build_psi(0.3 * T)
    y = np.linspace(-12.0, 12.0, 2001)
    assert np.all(prof.jet(y).psi1 > 0)


def test_psi_node_residual(T):
    for tau in (0.2 * T, 0.5 * T, 0.8 * T):
        assert np.max(np.abs(build_psi(tau).node_residual())) <= 1e-9


def test_psi_stationary_single_zero(T):
    prof = build_psi(T)
    y = np.linspace(-12.0, 12.0, 24001)
    d = prof.jet(y).psi1
    flips = np.flatnonzero(np.sign(d[:-1]) != np.sign(d[1:]))
    assert flips.size == 1
    assert abs(y[flips[0]] - prof.y0) <= 2e-3


def test_psi_domain(T):
    with pytest.raises(DomainError):
        build_psi(T + 0.05)
    with pytest.raises(DomainError):
        build_psi(-0.1)
    with pytest.raises(DomainError):
        build_psi(0.1, y_range=(0.5, 3.0))


# ---------------------------------------------------------------------------
# xi'' and lambda

def test_xi_second_family_a_sinh():
    y = np.linspace(-4, 4, 41)
    assert np.allclose(xi_second(HamiltonianSpec(Family.A, tau=0.0, c=1.0), y), 1.0 / np.cosh(y) ** 2,
                       rtol=1e-9, atol=0)


def test_xi_second_family_b_sinh():
    y = np.linspace(-4, 4, 41)
    assert np.allclose(xi_second(spec_b(0.0, 0.0), y), 1.0 / np.cosh(y) ** 2, rtol=1e-9, atol=0)


def test_xi_second_origin(T):
    lo, hi = b_bounds(0.5 * T)
    b = hi + 1.0
    assert xi_second(spec_b(0.5 * T, b), 0.0)[0] == pytest.approx(1.0 + b, abs=1e-12)


def test_xi_second_family_a_degenerate(T):
    met = build_metric(HamiltonianSpec(Family.A, tau=T))
    with pytest.raises(DegenerateDerivative):
        met.xi_second(np.array([met.profile.y0]))


def test_lambda_flat_in_phi_at_zero():
    spec = HamiltonianSpec(Family.A, tau=0.0)
    y = np.linspace(-3, 3, 13)
    rows = [conformal_factor(spec, phi, y) for phi in (0.0, 1.0, 2.5)]
    assert np.max(np.abs(rows[0] - rows[1])) <= 1e-14
    assert np.max(np.abs(rows[0] - rows[2])) <= 1e-14


def test_lambda_admissible_positive(T):
    lo, hi = b_bounds(0.5 * T)
    for b in (hi + 1.0, lo - 1.0):
        scan = lambda_scan(spec_b(0.5 * T, b))
        assert scan.positive and scan.minimum > 0 and scan.n_points == 40000


@pytest.mark.parametrize("frac", [0.25, 0.5, 0.75])
def test_admissibility_dichotomy(T, frac):
    tau = frac * T
    lo, hi = b_bounds(tau)
    for b in (lo + 0.3 * (hi - lo), 0.5 * (lo + hi), lo + 0.7 * (hi - lo)):
        assert lambda_scan(spec_b(tau, b)).sign_change
    for b in (hi + 1.0, lo - 1.0, hi + 5.0, lo - 5.0):
        assert lambda_scan(spec_b(tau, b)).positive


def test_lambda_close_to_band(T):
    # At one thousandth of the band width outside it, lambda (energy 1) is
    # negative near a pole, while the weight stays positive and the Jacobi
    # factor is positive above the maximum of U.
    tau = 0.5 * T
    lo, hi = b_bounds(tau)
    margin = 1e-3 * (hi - lo)
    for b in (hi + margin, lo - margin):
        met = build_metric(spec_b(tau, b))
        phi = np.linspace(0.0, 2 * np.pi, 200, endpoint=False)
        y = np.linspace(-8.0, 8.0, 200)
        P, Y = np.meshgrid(phi, y, indexing="ij")
        assert np.min(met.lam(P, Y)) < 0
        w, _, U, _, _ = met.hamiltonian_parts(P, Y)
        assert np.all(w > 0)
        jac = met.with_energy(1.05 * float(np.max(U)))
        assert np.all(jac.lam(P, Y) > 0)


def test_hamiltonian_examples():
    state = CotangentState(0.0, 0.0, 1.0, 0.0)
    assert hamiltonian_eval(HamiltonianSpec(Family.A, tau=0.0), state) == pytest.approx(0.5, abs=1e-14)
    assert hamiltonian_eval(spec_b(0.0, 0.0), state) == pytest.approx(0.5, abs=1e-14)


def test_hamiltonian_inadmissible(T):
    lo, hi = b_bounds(0.5 * T)
    with pytest.raises(DegenerateDenominator):
        hamiltonian_eval(spec_b(0.5 * T, 0.5 * (lo + hi)), CotangentState(0.0, 0.0, 1.0, 0.0))


@pytest.mark.parametrize("family", ["A", "B"])
def test_chart_consistency(T, family):
    tau = 0.5 * T
    spec = HamiltonianSpec(Family.A, tau=tau) if family == "A" else spec_b(tau, b_bounds(tau).high + 1.0)
    met = build_metric(spec)
    rng = np.random.default_rng(7)
    for _ in range(100):
        phi, p_phi, p_y = rng.uniform(0, 2 * np.pi), rng.normal(), rng.normal()
        y = rng.uniform(-3.0, 3.0)
        chart = Chart.R if y < 0 else Chart.R_TILDE
        pm = polar_form(spec, chart)
        h_conf = float(met.hamiltonian(phi, y, p_phi, p_y))
        h_polar = np.asarray(pm.hamiltonian(*pm.from_conformal(phi, y, p_phi, p_y))).item()
        assert abs(h_conf - h_polar) <= 1e-9 * max(1.0, abs(h_conf))


# ---------------------------------------------------------------------------
# b bounds

def test_b_bounds_zero():
    lo, hi = b_bounds(0.0)
    assert abs(lo + 1.0) <= 1e-8 and abs(hi + 1.0) <= 1e-8


def test_b_bounds_half_T(T):
    lo, hi = b_bounds(0.5 * T)
    assert lo == pytest.approx(BOUNDS_HALF_T[0], abs=1e-10)
    assert hi == pytest.approx(BOUNDS_HALF_T[1], abs=1e-10)
    assert hi > lo


def test_b_bounds_continuity(T):
    taus = np.array([0.1, 0.03, 0.01, 0.003, 0.001]) * T
    gaps = [max(abs(v + 1.0) for v in b_bounds(t)) for t in taus]
    assert all(g2 < g1 for g1, g2 in zip(gaps, gaps[1:]))
    assert gaps[-1] <= 1e-2


@pytest.mark.parametrize("frac", [0.1, 0.5, 0.9])
def test_b_bounds_two_methods(T, frac):
    lo, hi = b_bounds(frac * T)
    plo, phi = b_bounds_via_phi(frac * T)
    assert abs(lo - plo) <= 1e-4 and abs(hi - phi) <= 1e-4


def test_b_bounds_via_phi_refinement(T):
    coarse = b_bounds_via_phi(0.5 * T, n_panels=50)
    fine = b_bounds_via_phi(0.5 * T, n_panels=500)
    assert max(abs(a - b) for a, b in zip(coarse, fine)) <= 1e-6


def test_b_bounds_via_phi_zero():
    lo, hi = b_bounds_via_phi(0.0)
    assert abs(lo + 1.0) <= 1e-8 and abs(hi + 1.0) <= 1e-8


def test_b_bounds_domain(T):
    with pytest.raises(DomainError):
        b_bounds(T)
    with pytest.raises(DomainError):
        b_bounds(-0.1)


# ---------------------------------------------------------------------------
# polar charts and poles

def test_polar_form_round():
    spec = HamiltonianSpec(Family.A, tau=0.0)
    rho = np.linspace(0.0, 1.0, 51)
    for chart in ("r", "rt"):
        pm = polar_form(spec, chart)
        assert np.allclose(pm.psi2(rho), 4.0 / (1.0 + rho) ** 2, rtol=1e-10, atol=0)
        assert np.max(np.abs(pm.psi1(rho))) <= 1e-12


def test_polar_form_pole_limit(T):
    spec = HamiltonianSpec(Family.A, tau=0.3 * T)
    met = build_metric(spec)
    for chart in (Chart.R, Chart.R_TILDE):
        pm = polar_form(spec, chart)
        lim = pm.limits()["psi1"]
        r = np.array([1e-2, 3e-3, 1e-3])
        y = np.log(r) if chart is Chart.R else -np.log(r)
        near = met.profile.jet(y).P / r ** 3
        assert np.all(np.abs(near - lim) <= 10 * r ** 2 * max(1.0, abs(lim)))


def test_polar_form_bad_chart():
    with pytest.raises(ChartMismatch):
        polar_form(HamiltonianSpec(Family.A, tau=0.0), "z")


def test_pole_smoothness_round():
    reports = pole_smoothness_check(HamiltonianSpec(Family.A, tau=0.0))
    for rep in reports:
        assert rep.smooth
        assert max(rep.residual_psi1, rep.residual_psi2) <= 1e-8
        assert rep.limit_psi2 == pytest.approx(4.0, abs=1e-8)
        assert abs(rep.limit_psi1) <= 1e-8


def test_pole_smoothness_family_b(T):
    lo, hi = b_bounds(0.5 * T)
    for b in (hi + 1.0, lo - 1.0):
        for rep in pole_smoothness_check(spec_b(0.5 * T, b)):
            assert rep.smooth and rep.bounded
            assert math.isfinite(rep.limit_psi2) and math.isfinite(rep.limit_psi1)


def test_pole_smoothness_family_a_at_T(T):
    reports = pole_smoothness_check(HamiltonianSpec(Family.A, tau=T))
    assert not all(rep.smooth for rep in reports)


# ---------------------------------------------------------------------------
# curvature and identities

def test_curvature_round():
    phi = np.linspace(0.0, 2 * np.pi, 200, endpoint=False)
    y = np.linspace(-5.0, 5.0, 200)
    P, Y = np.meshgrid(phi, y, indexing="ij")
    K = gaussian_curvature(HamiltonianSpec(Family.A, tau=0.0), P, Y)
    assert np.max(np.abs(K - 1.0)) <= 1e-6


def test_curvature_family_b_zero():
    K = gaussian_curvature(spec_b(0.0, 0.0), np.array([0.0, 1.0, 2.0]), np.array([-1.0, 0.0, 2.0]))
    assert np.ptp(K) <= 1e-8


def test_curvature_nonconstant(T):
    phi = np.linspace(0.0, 2 * np.pi, 40, endpoint=False)
    y = np.linspace(-3.0, 3.0, 40)
    P, Y = np.meshgrid(phi, y, indexing="ij")
    K = gaussian_curvature(HamiltonianSpec(Family.A, tau=0.5 * T), P, Y)
    assert np.ptp(K) > 1e-3


def test_curvature_nonpositive(T):
    lo, hi = b_bounds(0.5 * T)
    met = build_metric(spec_b(0.5 * T, 0.5 * (lo + hi)))
    phi = np.linspace(0.0, 2 * np.pi, 60)
    y = np.linspace(-6.0, 6.0, 60)
    P, Y = np.meshgrid(phi, y, indexing="ij")
    with pytest.raises(NonPositiveLambda):
        gaussian_curvature(met.spec, P, Y)


@pytest.mark.parametrize("family", ["A", "B+", "B-"])
def test_xi_ode_residual(T, family):
    tau = 0.5 * T
    lo, hi = b_bounds(tau)
    spec = {"A": HamiltonianSpec(Family.A, tau=tau), "B+": spec_b(tau, hi + 1.0), "B-": spec_b(tau, lo - 1.0)}[family]
    y = np.linspace(-6.0, 6.0, 121)
    assert np.max(np.abs(xi_ode_residual(spec, y))) <= 1e-8


def test_f_laplacian(T):
    lo, hi = b_bounds(0.5 * T)
    rng = np.random.default_rng(3)
    phi = rng.uniform(0, 2 * np.pi, 30)
    y = rng.uniform(-2.0, 2.0, 30)
    for spec in (HamiltonianSpec(Family.A, tau=0.5 * T), spec_b(0.5 * T, lo - 1.0)):
        assert np.max(np.abs(f_laplacian_residual(spec, phi, y))) <= 1e-6


def test_spec_validation():
    with pytest.raises(ValueError):
        HamiltonianSpec(Family.B, tau=0.1)
    with pytest.raises(ValueError):
        HamiltonianSpec(Family.A, tau=math.nan)
    with pytest.raises(ValueError):
        HamiltonianSpec(Family.A, kinetic_normalization="other")
