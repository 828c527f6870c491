"""The Goryachev-Chaplygin system on the sphere and equivalence fits.

The system is H = K + U on the unit sphere u in R^3 with the kinetic metric
(du1^2 + du2^2 + 4 du3^2) / (4 u1^2 + 4 u2^2 + u3^2) and U = -u1.  In the
chart u = (sin t cos phi, sin t sin phi, cos t) the metric is
A dt^2 + B dphi^2 with A = 1, B = sin^2 t / (1 + 3 sin^2 t), and U = -sin t cos phi.

Rotationally symmetric systems are compared through the pair (Psi3, Psi4) of
their Jacobi factor Psi3(y) cos(phi) + Psi4(y) in conformal coordinates:
Psi4 = 1/w and Psi3 = -V/w for H = w |p|^2 / 2 + V(y) cos(phi).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.optimize import least_squares, minimize

from .errors import DomainError, NoOverlap, NoStationaryPoint, QuadratureFailure
from .metric import Family, HamiltonianSpec, PolarMetric, build_metric, build_psi, Chart
from .ode_core import IvpSpec, TerminationKind, integrate_ivp


@dataclass(frozen=True, eq=False)
class RotSymMetricProfile:
    """ds^2 = A(t) dt^2 + B(t) dphi^2 with potential V(t) cos(phi), t in (0, pi)."""

    A: object
    B: object
    V: object
    name: str = ""


def gc_profile() -> RotSymMetricProfile:
    def A(t):
        t = np.asarray(t, dtype=float)
        return (1.0 + 3.0 * np.sin(t) ** 2) / (4.0 - 3.0 * np.cos(t) ** 2)

    def B(t):
        t = np.asarray(t, dtype=float)
        return np.sin(t) ** 2 / (4.0 - 3.0 * np.cos(t) ** 2)

    def V(t):
        return -np.sin(np.asarray(t, dtype=float))

    return RotSymMetricProfile(A, B, V, "goryachev-chaplygin")


def round_sphere_profile() -> RotSymMetricProfile:
    return RotSymMetricProfile(lambda t: np.ones_like(np.asarray(t, dtype=float)),
                               lambda t: np.sin(np.asarray(t, dtype=float)) ** 2,
                               lambda t: np.zeros_like(np.asarray(t, dtype=float)), "round")


def _embedding(t, phi):
    return np.array([np.sin(t) * np.cos(phi), np.sin(t) * np.sin(phi), np.cos(t)])


def embedding_pullback(t, phi: float = 0.3, h: float = 1e-3):
    """(A, B, off-diagonal) of the ambient GC form pulled back by 4th-order differences."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    w = np.array([1.0, -8.0, 8.0, -1.0]) / (12.0 * h)
    st = np.array([-2.0, -1.0, 1.0, 2.0]) * h
    Q = np.diag([1.0, 1.0, 4.0])
    out = np.empty((t.size, 3))
    for i, tt in enumerate(t):
        et = sum(wk * _embedding(tt + d, phi) for wk, d in zip(w, st))
        ep = sum(wk * _embedding(tt, phi + d) for wk, d in zip(w, st))
        u = _embedding(tt, phi)
        den = 4.0 * u[0] ** 2 + 4.0 * u[1] ** 2 + u[2] ** 2
        out[i] = (et @ Q @ et / den, ep @ Q @ ep / den, et @ Q @ ep / den)
    return out


def gc_conformal_y(t):
    """Closed form of the conformal coordinate of the GC metric (y = 0 on the equator)."""
    c = np.cos(np.asarray(t, dtype=float))
    return -(math.sqrt(3.0) * np.arcsin(math.sqrt(3.0) * c / 2.0)
             + np.arctanh(c / np.sqrt(4.0 - 3.0 * c * c)))


@dataclass(frozen=True, eq=False)
class ConformalChart:
    """y(t) = int_{pi/2}^t sqrt(A/B), inverse t(y), factor lambda(y) = B(t(y)), potential V(t(y))."""

    profile: RotSymMetricProfile
    y_max: float
    _inverse: object

    def y_of_theta(self, t, tol: float = 1e-12):
        """Quadrature in v = log tan(t/2), where the integrand sqrt(A/B) sin t stays bounded."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty(t.size)
        for i, tt in enumerate(t):
            if not 0.0 < tt < math.pi:
                raise QuadratureFailure(f"t = {tt} is a pole or outside (0, pi)")
            v_end = math.log(math.tan(0.5 * tt))

            def integrand(v):
                th = 2.0 * math.atan(math.exp(v))
                return math.sqrt(float(self.profile.A(th)) / float(self.profile.B(th))) * math.sin(th)

            val, err = quad(integrand, 0.0, v_end, epsabs=1e-14, epsrel=1e-13, limit=200)
            if not err <= tol * max(1.0, abs(val)):
                raise QuadratureFailure(f"quadrature error {err:.2e} at t = {tt}")
            out[i] = val
        return out

    def theta_of_y(self, y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if np.any(np.abs(y) > self.y_max):
            raise DomainError(f"|y| > {self.y_max}")
        return self._inverse(y)

    def lam(self, y):
        return self.profile.B(self.theta_of_y(y))

    def potential(self, y):
        return self.profile.V(self.theta_of_y(y))


def conformal_polar_coords(profile: RotSymMetricProfile, y_max: float = 12.0) -> ConformalChart:
    def rhs(y, t):
        return np.sqrt(profile.B(t) / profile.A(t))

    sols = [solve_ivp(rhs, (0.0, s * y_max), [0.5 * math.pi], method="DOP853", rtol=1e-13,
                      atol=1e-16, dense_output=True) for s in (1.0, -1.0)]
    for sol in sols:
        if sol.status != 0:
            raise QuadratureFailure(sol.message)

    def inverse(y):
        out = np.empty(y.size)
        pos = y >= 0
        if pos.any():
            out[pos] = sols[0].sol(y[pos])[0]
        if (~pos).any():
            out[~pos] = sols[1].sol(y[~pos])[0]
        return out

    return ConformalChart(profile, y_max, inverse)


# ---------------------------------------------------------------------------
# polar charts and the gauge transformation

def round_sphere_polar() -> PolarMetric:
    return PolarMetric(Chart.R, lambda rho: np.zeros_like(np.asarray(rho, dtype=float)),
                       lambda rho: 4.0 / (1.0 + np.asarray(rho, dtype=float)) ** 2,
                       lambda rho: (1.0 + np.asarray(rho, dtype=float)) ** 2 / 4.0)


def lemma_L_transform(pm: PolarMetric, D: float, sign: int) -> PolarMetric:
    """Polar form in the chart r~ = D r^sign, phi~ = sign phi.

    sign +1: Psi1~(p) = Psi1(p/D^2)/D^3,     Psi2~(p) = Psi2(p/D^2)/D^2
    sign -1: Psi1~(p) = Psi1(D^2/p) D^3/p^3, Psi2~(p) = Psi2(D^2/p) D^2/p^2
    """
    if not D > 0:
        raise ValueError("D must be positive")
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    D2 = D * D
    if sign == 1:
        def p1(rho):
            return pm.psi1(np.asarray(rho, dtype=float) / D2) / D ** 3

        def p2(rho):
            return pm.psi2(np.asarray(rho, dtype=float) / D2) / D2

        def w(rho):
            return pm.weight(np.asarray(rho, dtype=float) / D2) * D2
    else:
        def p1(rho):
            rho = np.asarray(rho, dtype=float)
            return pm.psi1(D2 / rho) * D ** 3 / rho ** 3

        def p2(rho):
            rho = np.asarray(rho, dtype=float)
            return pm.psi2(D2 / rho) * D2 / rho ** 2

        def w(rho):
            rho = np.asarray(rho, dtype=float)
            return pm.weight(D2 / rho) * rho ** 2 / D2
    return PolarMetric(pm.chart, p1, p2, w)


# ---------------------------------------------------------------------------
# equivalence fits

@dataclass(frozen=True, eq=False)
class ConformalProfile:
    """Jacobi factor Psi3(y) cos(phi) + Psi4(y) on ``y_range``."""

    psi3: object
    psi4: object
    y_range: tuple
    label: str = ""


def gc_conformal_profile(y_max: float = 8.0) -> ConformalProfile:
    chart = _gc_chart()

    def psi3(y):
        t = chart.theta_of_y(y)
        return -chart.profile.V(t) * chart.profile.B(t)

    def psi4(y):
        return chart.profile.B(chart.theta_of_y(y))

    return ConformalProfile(psi3, psi4, (-y_max, y_max), "GC")


@lru_cache(maxsize=1)
def _gc_chart():
    return conformal_polar_coords(gc_profile())


def spec_conformal_profile(spec: HamiltonianSpec, y_range=(-10.0, 10.0)) -> ConformalProfile:
    met = build_metric(spec)

    def psi3(y):
        return met.profile.jet(y).P

    def psi4(y):
        return met.xi_derivatives(np.atleast_1d(np.asarray(y, dtype=float)))[0]

    label = f"{spec.family.value}(tau={spec.tau!r}, b={spec.b!r}, c={spec.c!r})"
    return ConformalProfile(psi3, psi4, tuple(y_range), label)


def lemma_L_profile(profile: ConformalProfile, D: float, sign: int) -> ConformalProfile:
    """The same system in the coordinate y~ = sign y + log D."""
    if not D > 0 or sign not in (1, -1):
        raise ValueError("need D > 0 and sign in {+1, -1}")
    shift = math.log(D)

    def back(y):
        return sign * (np.asarray(y, dtype=float) - shift)

    lo, hi = profile.y_range
    ends = sorted((sign * lo + shift, sign * hi + shift))
    return ConformalProfile(lambda y: profile.psi3(back(y)), lambda y: profile.psi4(back(y)),
                            tuple(ends), profile.label + f" L({D!r},{sign})")


@dataclass(frozen=True)
class EquivalenceFit:
    C0: float
    C3: float
    y1: float
    sign: int
    residual_V: float
    residual_K: float

    @property
    def residual(self):
        return max(self.residual_V, self.residual_K)

    def as_dict(self):
        d = dict(self.__dict__)
        d["residual"] = self.residual
        return d


def _fit_grid(p1, p2, sign, y1, n):
    lo1, hi1 = p1.y_range
    lo2, hi2 = p2.y_range
    # need sign * y + y1 inside range 2
    a, b = sorted(((lo2 - y1) * sign, (hi2 - y1) * sign))
    lo, hi = max(lo1, a), min(hi1, b)
    if not hi > lo:
        return None
    return np.linspace(lo, hi, n)


def _residuals(p1, p2, sign, y1, n, C=None):
    y = _fit_grid(p1, p2, sign, y1, n)
    if y is None:
        return None
    a3, a4 = p1.psi3(y), p1.psi4(y)
    t = sign * y + y1
    b3, b4 = p2.psi3(t), p2.psi4(t)
    if C is None:
        C0 = float(a3 @ b3 / (b3 @ b3)) if b3 @ b3 > 0 else 1.0
        C3 = float(a4 @ b4 / (b4 @ b4)) if b4 @ b4 > 0 else 1.0
    else:
        C0, C3 = C
    s3 = max(float(np.max(np.abs(a3))), 1e-300)
    s4 = max(float(np.max(np.abs(a4))), 1e-300)
    return (a3 - C0 * b3) / s3, (a4 - C3 * b4) / s4, C0, C3


def _sup(r):
    return max(float(np.max(np.abs(r[0]))), float(np.max(np.abs(r[1]))))


def match_equivalence(profile1: ConformalProfile, profile2: ConformalProfile, search_box=(-5.0, 5.0),
                      n_grid: int = 801, n_scan: int = 161, n_coarse: int = 121) -> EquivalenceFit:
    """Fit Psi3_1(y) = C0 Psi3_2(s y + y1) and Psi4_1(y) = C3 Psi4_2(s y + y1).

    Both signs s are tried; y1 is scanned over ``search_box`` and then refined
    by least squares followed by a direct minimisation of the joint sup
    residual (each part scaled by the sup of the profile-1 function).
    """
    lo, hi = (float(v) for v in search_box)
    scan = np.linspace(lo, hi, n_scan)
    if lo < 0.0 < hi:
        scan = np.sort(np.append(scan, 0.0))
    cands = []
    for sign in (1, -1):
        for y1 in scan:
            r = _residuals(profile1, profile2, sign, y1, n_coarse)
            if r is not None:
                cands.append((_sup(r), sign, y1, r[2], r[3]))
    if not cands:
        raise NoOverlap("profiles share no y-range for any shift in the search box")
    cands.sort(key=lambda c: c[0])
    best = None
    for res, sign, y1, C0, C3 in cands[:3]:
        r = _residuals(profile1, profile2, sign, y1, n_grid, (C0, C3))
        fit = _refine(profile1, profile2, sign, (_sup(r), y1, C0, C3), n_grid, (lo, hi))
        if best is None or fit.residual < best.residual:
            best = fit
    if best is None:
        raise NoOverlap("profiles share no y-range for any shift in the search box")
    return best


def _refine(p1, p2, sign, start, n, box):
    res0, y1, C0, C3 = start
    best = (res0, y1, C0, C3)

    def vec(x):
        r = _residuals(p1, p2, sign, x[2], n, (x[0], x[1]))
        if r is None:
            return np.full(2 * n, 1e3)
        return np.concatenate([r[0], r[1]])

    def sup(x):
        if not box[0] <= x[2] <= box[1]:
            return math.inf
        r = _residuals(p1, p2, sign, x[2], n, (x[0], x[1]))
        return math.inf if r is None else _sup(r)

    if res0 > 0.0:
        ls = least_squares(vec, [C0, C3, y1], xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=400)
        val = sup(ls.x)
        if val < best[0]:
            best = (val, ls.x[2], ls.x[0], ls.x[1])
        nm = minimize(sup, [best[2], best[3], best[1]], method="Nelder-Mead",
                      options={"xatol": 1e-13, "fatol": 1e-15, "maxiter": 2000})
        if nm.fun < best[0]:
            best = (float(nm.fun), nm.x[2], nm.x[0], nm.x[1])
    res, y1, C0, C3 = best
    r = _residuals(p1, p2, sign, y1, n, (C0, C3))
    return EquivalenceFit(float(C0), float(C3), float(y1), sign,
                          float(np.max(np.abs(r[0]))), float(np.max(np.abs(r[1]))))


def gc_chart_symmetry_residual(y_max: float = 8.0, n: int = 401) -> float:
    """sup |Psi(y) - Psi(-y)| over both GC profile functions (the chart swap r -> 1/r)."""
    prof = gc_conformal_profile(y_max)
    y = np.linspace(0.0, y_max, n)
    return float(max(np.max(np.abs(prof.psi3(y) - prof.psi3(-y))),
                     np.max(np.abs(prof.psi4(y) - prof.psi4(-y)))))


# ---------------------------------------------------------------------------
# the tau = T point

@dataclass(frozen=True)
class StationaryPoint:
    y0: float
    b: float
    y0_event: float | None


def stationary_point(tau: float | None = None, T_ref: float | None = None, tol: float = 1e-9):
    """Zero y0 of psi' and b = psi(y0)^2 for the profile at tau (default T).

    The value comes from the even solution; the x' = 0 event of the
    integrated trajectory is reported alongside as a cross-check.
    """
    if T_ref is None:
        from .fixture import default_T
        T_ref = default_T()
    tau = T_ref if tau is None else float(tau)
    traj = integrate_ivp(IvpSpec(tau, (-40.0, 40.0)))
    term = traj.termination
    event = term.t if term.kind is TerminationKind.DERIVATIVE_ZERO else None
    if abs(tau - T_ref) > tol:
        if event is None:
            raise NoStationaryPoint(f"x' stays positive for tau = {tau}")
        raise DomainError(f"tau = {tau} exceeds T; the solution is not global")
    prof = build_psi(tau, T_ref=T_ref)
    return StationaryPoint(prof.y0, prof.amplitude ** 2, event)


def gc_b_value(tau: float | None = None, T_ref: float | None = None) -> float:
    return stationary_point(tau, T_ref).b


def gc_family_spec(T_ref: float | None = None) -> HamiltonianSpec:
    if T_ref is None:
        from .fixture import default_T
        T_ref = default_T()
    return HamiltonianSpec(Family.B, T_ref, b=gc_b_value(T_ref, T_ref))


__all__ = [
    "RotSymMetricProfile", "gc_profile", "round_sphere_profile", "embedding_pullback",
    "gc_conformal_y", "ConformalChart", "conformal_polar_coords", "round_sphere_polar",
    "lemma_L_transform", "ConformalProfile", "gc_conformal_profile", "spec_conformal_profile",
    "lemma_L_profile", "gc_chart_symmetry_residual", "EquivalenceFit", "match_equivalence",
    "StationaryPoint", "stationary_point", "gc_b_value", "gc_family_spec",
]
