import math

import numpy as np
import pytest

from s2cubic.errors import DomainError, NoOverlap, NoStationaryPoint, QuadratureFailure
from s2cubic.gc import (ConformalProfile, conformal_polar_coords, embedding_pullback, gc_b_value,
                        gc_chart_symmetry_residual, gc_conformal_profile, gc_conformal_y, gc_family_spec,
                        gc_profile, lemma_L_profile, lemma_L_transform, match_equivalence, round_sphere_polar,
                        round_sphere_profile, spec_conformal_profile, stationary_point)
from s2cubic.metric import Chart, Family, HamiltonianSpec, b_bounds, lambda_scan, polar_form

Y0_FROZEN = -2.0188284716380696


@pytest.fixture(scope="module")
def gc_fit():
    return match_equivalence(gc_conformal_profile(), spec_conformal_profile(gc_family_spec()))


# ---------------------------------------------------------------------------
# the GC profile

def test_pullback():
    t = np.linspace(0.05, math.pi - 0.05, 60)
    prof = gc_profile()
    for phi in (0.3, 2.0):
        pb = embedding_pullback(t, phi=phi)
        assert np.max(np.abs(pb[:, 0] - prof.A(t))) <= 1e-9
        assert np.max(np.abs(pb[:, 1] - prof.B(t))) <= 1e-9
        assert np.max(np.abs(pb[:, 2])) <= 1e-9


def test_profile_values():
    prof = gc_profile()
    assert float(prof.B(math.pi / 2)) == pytest.approx(0.25, abs=1e-15)
    assert float(prof.A(math.pi / 2)) == pytest.approx(1.0, abs=1e-15)
    assert float(prof.V(math.pi / 2)) == -1.0
    # 4 u1^2 + 4 u2^2 + u3^2 = 4 - 3 cos^2 t: 4 on the equator, 1 at the poles
    assert 4.0 - 3.0 * math.cos(math.pi / 2) ** 2 == 4.0 and 4.0 - 3.0 * math.cos(0.0) ** 2 == 1.0


def test_profile_positive():
    prof = gc_profile()
    t = np.linspace(1e-6, math.pi - 1e-6, 1001)
    assert np.all(prof.A(t) > 0) and np.all(prof.B(t) > 0)
    ratio = prof.B(t) / np.sin(t) ** 2
    assert abs(ratio[0] - 1.0) <= 1e-9 and abs(ratio[-1] - 1.0) <= 1e-9
    assert float(prof.B(0.0)) == 0.0


# ---------------------------------------------------------------------------
# conformal coordinates

def test_mercator():
    chart = conformal_polar_coords(round_sphere_profile())
    t = np.linspace(0.05, math.pi - 0.05, 25)
    assert np.max(np.abs(chart.y_of_theta(t) - np.log(np.tan(t / 2)))) <= 1e-10
    y = np.linspace(-6, 6, 41)
    assert np.max(np.abs(chart.lam(y) - 1.0 / np.cosh(y) ** 2)) <= 1e-10


def test_gc_coordinate():
    chart = conformal_polar_coords(gc_profile())
    assert abs(chart.y_of_theta(math.pi / 2)[0]) <= 1e-15
    t = np.linspace(1e-5, math.pi - 1e-5, 200)
    y = chart.y_of_theta(t)
    assert np.all(np.diff(y) > 0)
    assert y[0] < -10 and y[-1] > 10
    inner = (t > 0.01) & (t < math.pi - 0.01)
    assert np.max(np.abs(y[inner] - gc_conformal_y(t[inner]))) <= 1e-10


def test_gc_inverse():
    chart = conformal_polar_coords(gc_profile())
    t = np.linspace(0.1, math.pi - 0.1, 31)
    assert np.max(np.abs(chart.theta_of_y(gc_conformal_y(t)) - t)) <= 1e-8


def test_gc_pole_asymptotics():
    chart = conformal_polar_coords(gc_profile())
    y = np.array([-9.0, -8.0])
    assert np.allclose(chart.theta_of_y(y) * np.exp(-y), 6.1337, rtol=1e-3)


def test_quadrature_failure():
    chart = conformal_polar_coords(gc_profile())
    for bad in (0.0, math.pi, 4.0):
        with pytest.raises(QuadratureFailure):
            chart.y_of_theta(bad)


def test_chart_domain():
    chart = conformal_polar_coords(gc_profile(), y_max=5.0)
    with pytest.raises(DomainError):
        chart.theta_of_y(6.0)


def test_chart_symmetry():
    assert gc_chart_symmetry_residual() <= 1e-10


# ---------------------------------------------------------------------------
# gauge transformations

RHO = np.linspace(0.01, 1.0, 100)


def same(pm1, pm2, rho=RHO, tol=1e-12):
    for name in ("psi1", "psi2", "weight"):
        a, b = getattr(pm1, name)(rho), getattr(pm2, name)(rho)
        assert np.max(np.abs(a - b) / np.maximum(1.0, np.abs(a))) <= tol


def test_lemma_identity():
    pm = round_sphere_polar()
    same(lemma_L_transform(pm, 1.0, 1), pm)


@pytest.mark.parametrize("D", [0.5, 1.3, 4.0])
def test_lemma_inverse_pairs(T, D):
    lo, hi = b_bounds(0.5 * T)
    pm = polar_form(HamiltonianSpec(Family.B, tau=0.5 * T, b=hi + 1.0), Chart.R)
    same(lemma_L_transform(lemma_L_transform(pm, 1.0 / D, 1), D, 1), pm)
    same(lemma_L_transform(lemma_L_transform(pm, D, -1), D, -1), pm)


def test_lemma_round_sphere_inversion():
    pm = round_sphere_polar()
    same(lemma_L_transform(pm, 1.0, -1), pm)


def test_lemma_guards():
    with pytest.raises(ValueError):
        lemma_L_transform(round_sphere_polar(), 0.0, 1)
    with pytest.raises(ValueError):
        lemma_L_transform(round_sphere_polar(), 1.0, 2)


# ---------------------------------------------------------------------------
# equivalence fits

def test_self_match(T):
    lo, hi = b_bounds(0.5 * T)
    prof = spec_conformal_profile(HamiltonianSpec(Family.B, tau=0.5 * T, b=hi + 1.0))
    fit = match_equivalence(prof, prof)
    assert (fit.C0, fit.C3, fit.y1, fit.sign) == (1.0, 1.0, 0.0, 1)
    assert fit.residual <= 1e-12


def test_gc_match(gc_fit):
    assert gc_fit.residual <= 1e-3
    assert gc_fit.sign == -1
    assert gc_fit.C0 == pytest.approx(1.0 / 6.0, abs=1e-8)
    assert gc_fit.C3 == pytest.approx(1.0 / 12.0, abs=1e-8)
    assert gc_fit.y1 == pytest.approx(Y0_FROZEN, abs=1e-8)
    # kinetic and potential parts need different constants
    assert gc_fit.C0 / gc_fit.C3 == pytest.approx(2.0, rel=1e-8)


def test_gc_match_gauge_invariant(gc_fit):
    moved = lemma_L_profile(gc_conformal_profile(), 2.5, -1)
    fit = match_equivalence(moved, spec_conformal_profile(gc_family_spec()))
    assert abs(fit.residual - gc_fit.residual) <= 1e-9
    assert fit.sign == 1


def test_cross_tau_not_equivalent(T):
    b = max(b_bounds(0.3 * T).high, b_bounds(0.6 * T).high) + 1.0
    p1 = spec_conformal_profile(HamiltonianSpec(Family.B, tau=0.3 * T, b=b))
    p2 = spec_conformal_profile(HamiltonianSpec(Family.B, tau=0.6 * T, b=b))
    assert match_equivalence(p1, p2).residual >= 1e-3


def test_no_overlap():
    f = lambda y: np.ones_like(np.asarray(y, dtype=float))
    p1 = ConformalProfile(f, f, (-1.0, 1.0))
    p2 = ConformalProfile(f, f, (10.0, 12.0))
    with pytest.raises(NoOverlap):
        match_equivalence(p1, p2, search_box=(-1.0, 1.0))


def test_lemma_profile_guard():
    with pytest.raises(ValueError):
        lemma_L_profile(gc_conformal_profile(), -1.0, 1)


# ---------------------------------------------------------------------------
# the stationary point

def test_stationary_point():
    sp = stationary_point()
    assert sp.y0 == pytest.approx(Y0_FROZEN, abs=1e-10)
    assert sp.b == pytest.approx(1.0, abs=1e-10)
    assert sp.y0_event is not None and abs(sp.y0_event - sp.y0) <= 0.05
    assert gc_b_value() == sp.b


def test_no_stationary_point(T):
    with pytest.raises(NoStationaryPoint):
        gc_b_value(0.9 * T)


def test_beyond_T(T):
    with pytest.raises(DomainError):
        gc_b_value(T + 0.05)


def test_gc_spec_positive():
    scan = lambda_scan(gc_family_spec())
    assert scan.positive and not scan.degenerate


@pytest.mark.parametrize("delta", [0.01, -0.01])
def test_gc_spec_perturbed(T, delta):
    spec = HamiltonianSpec(Family.B, tau=T, b=gc_b_value() + delta)
    assert lambda_scan(spec).degenerate
