"""Profiles psi, the conformal factor and the two Hamiltonian families.

A profile psi solves psi' psi''' = psi psi'' - 2 psi''^2 + psi'^2 + psi^2 with
psi(0) = 0, psi'(0) = 1, psi''(0) = tau.  Near y = 0 it is read from the
integrated trajectory; for large |y| it is rebuilt from the g-functions,

    y > 0:  psi = e^y g_tau(s),        psi' = e^y zeta_tau(s),     s = e^{-2y}
    y < 0:  psi = -e^{-y} g_{-tau}(s), psi' = e^{-y} zeta_{-tau}(s), s = e^{2y}

which keeps psi'' - psi = 4 e^{-3y} g_tau''(s) free of cancellation.  At
tau = T the profile is a rescaled copy of the even solution Theta around its
stationary point.

With P = psi'' - psi, the conformal factor is lambda = P cos(phi) + xi''(y)
where xi'' = c / psi'^2 (family A) or a (b - m) / psi'^2 (family B) and
m = psi^2 - psi'^2.  Hamiltonians use H = w |p|^2 / 2 + U with U = -w P cos(phi).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .critical import SERIES, GProfile, solve_g, stationary_solution, theta_series
from .errors import (ChartMismatch, DegenerateDenominator, DegenerateDerivative, DomainError,
                     NonPositiveLambda, UnboundedDiagnostic)
from .ode_core import IvpSpec, TerminationKind, integrate_ivp

Y_JOIN = 1.0
THETA_WINDOW = 2.0
SERIES_U = 0.5
RATIO_U = 0.3
STATIONARY_TOL = 1e-9
GC_B_TOL = 1e-9
KINETIC_CONVENTION = "half_inverse_conformal"


def _default_T():
    from .fixture import default_T
    return default_T()


# ---------------------------------------------------------------------------
# profile

@dataclass(frozen=True)
class PsiJet:
    """psi and derivatives up to order 4, P = psi'' - psi with two derivatives, m = psi^2 - psi'^2."""

    psi: np.ndarray
    psi1: np.ndarray
    psi2: np.ndarray
    psi3: np.ndarray
    psi4: np.ndarray
    P: np.ndarray
    P1: np.ndarray
    P2: np.ndarray
    m: np.ndarray


def _complete(psi, psi1, P, m):
    psi2 = P + psi
    with np.errstate(divide="ignore", invalid="ignore"):
        k = 3.0 * psi + 2.0 * P
        P1 = -P * k / psi1
        P2 = -(P1 * k + P * (3.0 * psi1 + 2.0 * P1)) / psi1 - P1 * psi2 / psi1
    return psi2, psi1 + P1, psi2 + P2, P1, P2


@dataclass(frozen=True, eq=False)
class PsiProfile:
    tau: float
    y_range: tuple
    y_grid: np.ndarray
    values: np.ndarray
    g_plus: GProfile
    g_minus: GProfile
    trajectory: object = field(default=None, repr=False)
    y0: float | None = None
    amplitude: float = 1.0
    y_join: float = Y_JOIN

    @property
    def is_stationary(self):
        return self.y0 is not None

    def __call__(self, y):
        """Rows (psi, psi', psi'')."""
        j = self.jet(y)
        return np.column_stack([j.psi, j.psi1, j.psi2])

    def jet(self, y) -> PsiJet:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        psi = np.empty_like(y)
        psi1 = np.empty_like(y)
        P = np.empty_like(y)
        m = np.empty_like(y)
        if self.is_stationary:
            lo_edge = self.y0 - THETA_WINDOW
            core = (y >= lo_edge) & (y <= 0.0)
            plus = y > 0.0
            minus = y < lo_edge
        else:
            core = np.abs(y) <= self.y_join
            plus = y > self.y_join
            minus = y < -self.y_join
        if plus.any():
            yy = y[plus]
            s = np.exp(-2.0 * yy)
            g, g1, g2 = self.g_plus.evaluate(s).T
            e = np.exp(yy)
            psi[plus] = e * g
            psi1[plus] = e * (g - 2.0 * s * g1)
            P[plus] = 4.0 * np.exp(-3.0 * yy) * g2
            m[plus] = 4.0 * g1 * (g - s * g1)
        if minus.any():
            yy = y[minus]
            s = np.exp(2.0 * yy)
            g, g1, g2 = self.g_minus.evaluate(s).T
            e = np.exp(-yy)
            psi[minus] = -e * g
            psi1[minus] = e * (g - 2.0 * s * g1)
            P[minus] = -4.0 * np.exp(3.0 * yy) * g2
            m[minus] = 4.0 * g1 * (g - s * g1)
        if core.any():
            yy = y[core]
            if self.is_stationary:
                a = self.amplitude
                th, th1, th2 = stationary_solution().evaluate(yy - self.y0).T
                psi[core], psi1[core], P[core] = -a * th, -a * th1, -a * (th2 - th)
            else:
                x, x1, x2 = self.trajectory(yy).T
                psi[core], psi1[core], P[core] = x, x1, x2 - x
            m[core] = psi[core] ** 2 - psi1[core] ** 2
        psi2, psi3, psi4, P1, P2 = _complete(psi, psi1, P, m)
        if self.is_stationary:
            u = y - self.y0
            near = np.abs(u) <= SERIES_U
            if near.any():
                a = self.amplitude
                t0, t1, t2, t3, t4 = theta_series(u[near], order=4)
                psi[near], psi1[near], psi2[near] = -a * t0, -a * t1, -a * t2
                psi3[near], psi4[near] = -a * t3, -a * t4
                P[near], P1[near], P2[near] = -a * (t2 - t0), -a * (t3 - t1), -a * (t4 - t2)
                m[near] = psi[near] ** 2 - psi1[near] ** 2
        return PsiJet(psi, psi1, psi2, psi3, psi4, P, P1, P2, m)

    def ode_residual(self, y, h=1e-3):
        """Scaled residual with psi''' taken by finite differences of psi''."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        st = np.array([-2.0, -1.0, 1.0, 2.0]) * h
        d2 = self.jet((y[:, None] + st[None, :]).ravel()).psi2.reshape(y.size, 4)
        psi3 = (d2[:, 0] - 8.0 * d2[:, 1] + 8.0 * d2[:, 2] - d2[:, 3]) / (12.0 * h)
        j = self.jet(y)
        terms = [j.psi1 * psi3, j.psi * j.psi2, 2.0 * j.psi2 ** 2, j.psi1 ** 2, j.psi ** 2]
        res = terms[0] - terms[1] + terms[2] - terms[3] - terms[4]
        return res / np.maximum(1.0, sum(np.abs(t) for t in terms))

    def node_residual(self):
        """Residual at the stored nodes using the ODE closure of the evaluator."""
        j = self.jet(self.y_grid)
        res = j.psi1 * j.psi3 - (j.psi * j.psi2 - 2.0 * j.psi2 ** 2 + j.psi1 ** 2 + j.psi ** 2)
        scale = np.abs(j.psi1 * j.psi3) + np.abs(j.psi * j.psi2) + 2 * j.psi2 ** 2 + j.psi1 ** 2 + j.psi ** 2
        return res / np.maximum(1.0, scale)


def _build_stationary(tau, y_range, T_ref):
    sol = stationary_solution()
    alpha = 1.0 / abs(sol.slope_star)
    y0 = -sol.t_star
    g_plus = solve_g(T_ref, T_ref)
    g_minus = solve_g(-T_ref, T_ref)
    grid = np.linspace(y_range[0], y_range[1], 2401)
    prof = PsiProfile(tau, y_range, grid, np.empty((0, 3)), g_plus, g_minus, None, y0, alpha)
    return replace(prof, values=prof(grid))


@lru_cache(maxsize=32)
def _build_cached(tau, y_range, T_ref):
    if abs(tau - T_ref) <= STATIONARY_TOL:
        return _build_stationary(tau, y_range, T_ref)
    span = (min(y_range[0], -Y_JOIN), max(y_range[1], Y_JOIN))
    traj = integrate_ivp(IvpSpec(tau, span))
    if traj.termination.kind is not TerminationKind.COMPLETED:
        raise DomainError(f"tau = {tau}: x' does not stay positive ({traj.termination.kind.value})")
    t, ys = traj.node_arrays()
    keep = (t >= y_range[0]) & (t <= y_range[1])
    return PsiProfile(tau, y_range, t[keep], ys[keep], solve_g(tau, T_ref), solve_g(-tau, T_ref), traj)


def build_psi(tau: float, y_range=(-12.0, 12.0), T_ref: float | None = None) -> PsiProfile:
    """Profile for 0 <= tau <= T (T from the stored fixture unless given)."""
    T_ref = _default_T() if T_ref is None else float(T_ref)
    tau = float(tau)
    if not (-T_ref - STATIONARY_TOL <= tau <= T_ref + STATIONARY_TOL):
        raise DomainError(f"tau = {tau} outside [-T, T] with T = {T_ref}")
    if tau < 0:
        raise DomainError("negative tau is the reflection of a positive one; use -tau")
    lo, hi = (float(v) for v in y_range)
    if not lo < 0.0 < hi:
        raise DomainError("y_range must contain 0 in its interior")
    return _build_cached(tau, (lo, hi), T_ref)


# ---------------------------------------------------------------------------
# Hamiltonian data

class Family(str, Enum):
    A = "A"
    B = "B"
    GC = "GC"


@dataclass(frozen=True)
class HamiltonianSpec:
    family: Family
    tau: float = 0.0
    c: float = 1.0
    b: float | None = None
    kinetic_normalization: str = KINETIC_CONVENTION

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.family is Family.B and self.b is None:
            raise ValueError("family B needs b")
        if self.family is Family.GC:
            object.__setattr__(self, "b", None)
        if self.kinetic_normalization != KINETIC_CONVENTION:
            raise ValueError(f"unsupported kinetic normalization {self.kinetic_normalization!r}")
        for v in (self.tau, self.c) + ((self.b,) if self.b is not None else ()):
            if not math.isfinite(v):
                raise ValueError("parameters must be finite")

    def as_dict(self):
        return {"family": self.family.value, "tau": self.tau, "c": self.c, "b": self.b,
                "kinetic_normalization": self.kinetic_normalization}


@dataclass(frozen=True)
class BBounds:
    """Range [low, high] of m = psi^2 - psi'^2 over the line."""

    low: float
    high: float
    y_low: float
    y_high: float
    limits: tuple = ()

    def __iter__(self):
        return iter((self.low, self.high))


def _ratio_series(n_terms=16):
    """Coefficients r_k of (1 - Theta^2 + Theta'^2) / Theta'^2 = sum r_k u^(2k)."""
    c = list(SERIES)
    n = len(c)

    def mul(a, b):
        out = [Fraction(0)] * n
        for i, ai in enumerate(a):
            for j in range(n - i):
                out[i + j] += ai * b[j]
        return out

    d = [2 * (k + 1) * c[k + 1] for k in range(n - 1)] + [Fraction(0)]   # Theta'/u in w = u^2
    s1 = mul(d, d)                                   # Theta'^2 / u^2
    th2 = mul(c, c)
    num = [-th2[k + 1] + s1[k] for k in range(n - 1)] + [Fraction(0)]  # (1 - Theta^2 + Theta'^2) / u^2
    r = []
    for k in range(n_terms):
        acc = num[k] - sum(r[i] * s1[k - i] for i in range(k))
        r.append(acc / s1[0])
    return r


_RATIO = np.array([float(v) for v in _ratio_series()])


def _ratio_jet(u):
    """R, R', R'' where R = (1 - Theta^2 + Theta'^2) / Theta'^2."""
    full = np.zeros(2 * _RATIO.size - 1)
    full[::2] = _RATIO
    p = np.polynomial.Polynomial(full)
    return p(u), p.deriv(1)(u), p.deriv(2)(u)


@lru_cache(maxsize=64)
def _bounds_cached(tau, T_ref):
    prof = build_psi(tau, T_ref=T_ref)
    s_grid = np.unique(np.concatenate([np.linspace(0.0, 1.0, 2001), np.geomspace(1e-10, 1.0, 400)]))
    cand = []
    for sign, gp in ((1.0, prof.g_plus), (-1.0, prof.g_minus)):
        mv = gp.m_value(s_grid)
        for pick in (np.argmin, lambda v: np.argmax(v)):
            i = int(pick(mv))
            val, s_at = float(mv[i]), float(s_grid[i])
            if 0 < i < s_grid.size - 1:
                lo, hi = s_grid[i - 1], s_grid[i + 1]
                fn = (lambda s, g=gp: float(g.m_value([s])[0])) if pick is np.argmin else \
                     (lambda s, g=gp: -float(g.m_value([s])[0]))
                r = minimize_scalar(fn, bounds=(lo, hi), method="bounded", options={"xatol": 1e-14})
                v = float(gp.m_value([r.x])[0])
                if (pick is np.argmin and v < val) or (pick is not np.argmin and v > val):
                    val, s_at = v, float(r.x)
            y_at = -0.5 * math.log(s_at) * sign if s_at > 0 else sign * math.inf
            cand.append((val, y_at))
    limits = (float(prof.g_minus.m_value([0.0])[0]), float(prof.g_plus.m_value([0.0])[0]))
    _check_trend(prof, limits)
    low = min(cand, key=lambda c: c[0])
    high = max(cand, key=lambda c: c[0])
    return BBounds(low[0], high[0], low[1], high[1], limits)


def _check_trend(prof, limits, y_far=6.0, tol=1e-6):
    """Compare chart values of m with the directly integrated profile."""
    if prof.trajectory is None:
        return
    y = np.linspace(-y_far, y_far, 121)
    x, x1, _ = prof.trajectory(y).T
    direct = x * x - x1 * x1
    far = np.abs(y) > prof.y_join
    gap = float(np.max(np.abs(direct[far] - prof.jet(y[far]).m)))
    if not gap <= tol:
        raise UnboundedDiagnostic(f"chart and grid values of psi^2 - psi'^2 differ by {gap:.3e}")
    ends = (direct[0], direct[-1])
    for lim, end in zip(limits, ends):
        if not (math.isfinite(lim) and abs(end - lim) <= 1e-3 * max(1.0, abs(lim)) + 1e-2):
            raise UnboundedDiagnostic(f"asymptotic value {lim} inconsistent with grid value {end}")


def b_bounds(tau: float, T_ref: float | None = None) -> BBounds:
    """(b^*, b_*) = (min m, max m) with m = psi^2 - psi'^2 over the real line."""
    T_ref = _default_T() if T_ref is None else float(T_ref)
    tau = float(tau)
    if not 0.0 <= tau < T_ref - STATIONARY_TOL:
        raise DomainError(f"tau must lie in [0, T), got {tau}")
    return _bounds_cached(tau, T_ref)


def _gl_cumulative(fn, edges, order):
    x, w = np.polynomial.legendre.leggauss(order)
    a, b = edges[:-1], edges[1:]
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    pts = (mid[:, None] + half[:, None] * x[None, :])
    vals = fn(pts.ravel()).reshape(pts.shape)
    panel = (vals * w[None, :]).sum(axis=1) * half
    return panel


def b_bounds_via_phi(tau: float, n_panels: int = 200, order: int = 10, T_ref: float | None = None):
    """Bounds from the integrals of mu/xi and nu/zeta over s in [0, 1].

    Phi(s) = int_1^s mu/xi and Phi~(s) = int_1^s nu/zeta satisfy
    -Phi = 1 + m on y <= 0 and Phi~ = 1 + m on y >= 0.
    """
    T_ref = _default_T() if T_ref is None else float(T_ref)
    if not 0.0 <= tau < T_ref - STATIONARY_TOL:
        raise DomainError(f"tau must lie in [0, T), got {tau}")
    edges = np.linspace(0.0, 1.0, n_panels + 1)
    extremes = []
    for gp, sign in ((solve_g(tau, T_ref), 1.0), (solve_g(-tau, T_ref), -1.0)):
        # integrand in s: nu/zeta = 4 g'' zeta (y >= 0); mu/xi = -4 g~'' xi (y <= 0)
        def integrand(s, gp=gp):
            g, g1, g2 = gp.evaluate(s).T
            return 4.0 * g2 * (g - 2.0 * s * g1)

        panel = _gl_cumulative(integrand, edges, order)
        # integral from 1 down to each edge: Phi(edge_k) = -sum_{j >= k} panel_j
        tail = np.concatenate([np.cumsum(panel[::-1])[::-1], [0.0]])
        vals = -tail                                   # equals 1 + m, for either end
        pts = list(vals)
        f_edges = integrand(edges)
        for k in np.flatnonzero(np.sign(f_edges[:-1]) * np.sign(f_edges[1:]) < 0):
            root = brentq(lambda s: float(integrand(np.array([s]))[0]), edges[k], edges[k + 1], xtol=1e-15)
            part = _gl_cumulative(integrand, np.array([root, edges[k + 1]]), order)[0]
            pts.append(vals[k + 1] - part)
        extremes.append((min(pts), max(pts)))
    low = min(e[0] for e in extremes) - 1.0
    high = max(e[1] for e in extremes) - 1.0
    return low, high


# ---------------------------------------------------------------------------
# conformal metric

def _xi_family_a(c, j):
    with np.errstate(divide="ignore", invalid="ignore"):
        x2 = c / j.psi1 ** 2
        x3 = -2.0 * c * j.psi2 / j.psi1 ** 3
        x4 = -2.0 * c * (j.psi3 * j.psi1 - 3.0 * j.psi2 ** 2) / j.psi1 ** 4
    return x2, x3, x4


def _xi_family_b(a, b, j):
    D = b - j.m
    with np.errstate(divide="ignore", invalid="ignore"):
        x2 = a * D / j.psi1 ** 2
        x3 = 2.0 * a * (j.P / j.psi1 - D * j.psi2 / j.psi1 ** 3)
        x4 = 2.0 * a * (j.P1 / j.psi1 - 3.0 * j.P * j.psi2 / j.psi1 ** 2
                        - D * j.psi3 / j.psi1 ** 3 + 3.0 * D * j.psi2 ** 2 / j.psi1 ** 4)
    return x2, x3, x4


class ConformalMetric:
    """lambda(phi, y) = P(y) cos(phi) + xi''(y) together with its Hamiltonian data.

    ``a`` is the coefficient of phi^2 - y^2 in f = psi cos(phi) + xi + a (phi^2 - y^2):
    zero for family A and the orientation sign of b for family B.
    """

    def __init__(self, spec: HamiltonianSpec, profile: PsiProfile | None = None, T_ref=None,
                 energy: float = 1.0):
        if spec.family is Family.GC:
            raise ValueError("the GC system is built by the gc module")
        self.spec = spec
        self.T_ref = _default_T() if T_ref is None else float(T_ref)
        self.profile = profile if profile is not None else build_psi(spec.tau, T_ref=self.T_ref)
        self.energy = float(energy)
        self.orientation = 1.0
        self.admissible = True
        self.gc_point = False
        if spec.family is Family.B:
            b = float(spec.b)
            if self.profile.is_stationary:
                self.gc_point = abs(b - self.profile.amplitude ** 2) <= GC_B_TOL
                self.admissible = self.gc_point
            else:
                lo, hi = b_bounds(spec.tau, self.T_ref)
                if b < lo:
                    self.orientation = -1.0
                self.admissible = b > hi or b < lo
        self.c = spec.c * self.energy if spec.family is Family.A else 0.0
        self.a = self.orientation * self.energy if spec.family is Family.B else 0.0

    def with_energy(self, energy: float) -> "ConformalMetric":
        """Jacobi metric (E - U)/w at energy ``energy`` of the conservative system."""
        if self.spec.family is Family.A:
            return ConformalMetric(replace(self.spec, c=1.0), self.profile, self.T_ref, energy)
        return ConformalMetric(self.spec, self.profile, self.T_ref, energy)

    def require_admissible(self):
        if not self.admissible:
            raise DegenerateDenominator(
                f"b = {self.spec.b} is not admissible for tau = {self.spec.tau}")

    # xi and its derivatives ------------------------------------------------
    def xi_derivatives(self, y, jet: PsiJet | None = None):
        j = self.profile.jet(y) if jet is None else jet
        if self.spec.family is Family.A:
            return _xi_family_a(self.c, j)
        x2, x3, x4 = _xi_family_b(self.a, float(self.spec.b), j)
        if self.gc_point:
            u = np.atleast_1d(np.asarray(y, dtype=float)) - self.profile.y0
            near = np.abs(u) <= RATIO_U
            if near.any():
                r0, r1, r2 = _ratio_jet(u[near])
                x2, x3, x4 = x2.copy(), x3.copy(), x4.copy()
                x2[near], x3[near], x4[near] = self.a * r0, self.a * r1, self.a * r2
        return x2, x3, x4

    def xi_second(self, y):
        j = self.profile.jet(y)
        if self.spec.family is Family.A and np.any(np.abs(j.psi1) <= 1e-14):
            raise DegenerateDerivative("psi' vanishes; c / psi'^2 is undefined")
        return self.xi_derivatives(y, j)[0]

    def xi(self, y, order=48):
        """xi with xi(0) = xi'(0) = 0, by Gauss-Legendre quadrature of (y - s) xi''(s)."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        x, w = np.polynomial.legendre.leggauss(order)
        s = 0.5 * y[:, None] * (x[None, :] + 1.0)
        vals = self.xi_derivatives(s.ravel())[0].reshape(s.shape)
        return 0.5 * y * ((y[:, None] - s) * vals * w[None, :]).sum(axis=1)

    # lambda and f ------------------------------------------------------------
    def parts(self, phi, y):
        phi, y = np.broadcast_arrays(np.asarray(phi, dtype=float), np.asarray(y, dtype=float))
        shape = phi.shape
        j = self.profile.jet(y.ravel())
        x2, x3, x4 = self.xi_derivatives(y.ravel(), j)
        return shape, phi.ravel(), j, x2, x3, x4

    def lam(self, phi, y):
        shape, ph, j, x2, _, _ = self.parts(phi, y)
        return (j.P * np.cos(ph) + x2).reshape(shape)

    def lam_derivatives(self, phi, y):
        """lambda, lambda_phi, lambda_y, lambda_phiphi, lambda_phiy, lambda_yy."""
        shape, ph, j, x2, x3, x4 = self.parts(phi, y)
        c, s = np.cos(ph), np.sin(ph)
        out = (j.P * c + x2, -j.P * s, j.P1 * c + x3, -j.P * c, -j.P1 * s, j.P2 * c + x4)
        return tuple(v.reshape(shape) for v in out)

    def f_value(self, phi, y):
        phi, y = np.broadcast_arrays(np.asarray(phi, dtype=float), np.asarray(y, dtype=float))
        psi = self.profile.jet(y.ravel()).psi.reshape(y.shape)
        xi = self.xi(y.ravel()).reshape(y.shape)
        return psi * np.cos(phi) + xi + self.a * (phi ** 2 - y ** 2)

    def f_second(self, phi, y):
        """f_phiphi, f_yy, f_phiy."""
        shape, ph, j, x2, _, _ = self.parts(phi, y)
        c, s = np.cos(ph), np.sin(ph)
        out = (-j.psi * c + 2.0 * self.a, j.psi2 * c + x2 - 2.0 * self.a, -j.psi1 * s)
        return tuple(v.reshape(shape) for v in out)

    def f_third(self, phi, y):
        """f_phiphiphi, f_phiphiy, f_phiyy, f_yyy."""
        shape, ph, j, _, x3, _ = self.parts(phi, y)
        c, s = np.cos(ph), np.sin(ph)
        out = (j.psi * s, -j.psi1 * c, -j.psi2 * s, j.psi3 * c + x3)
        return tuple(v.reshape(shape) for v in out)

    # Hamiltonian -------------------------------------------------------------
    def weight(self, y):
        """Kinetic weight w and w_y for H = w |p|^2 / 2 + U."""
        j = self.profile.jet(y)
        return self._weight(j)

    def _weight(self, j):
        if self.spec.family is Family.A:
            return j.psi1 ** 2, 2.0 * j.psi1 * j.psi2
        D = float(self.spec.b) - j.m
        sg = self.orientation
        with np.errstate(divide="ignore", invalid="ignore"):
            w = sg * j.psi1 ** 2 / D
            wy = sg * (2.0 * j.psi1 * j.psi2 * D - j.psi1 ** 2 * 2.0 * j.psi1 * j.P) / D ** 2
        return w, wy

    def hamiltonian_parts(self, phi, y):
        """w, w_y, U, U_phi, U_y."""
        phi, y = np.broadcast_arrays(np.asarray(phi, dtype=float), np.asarray(y, dtype=float))
        shape = phi.shape
        ph = phi.ravel()
        yy = y.ravel()
        j = self.profile.jet(yy)
        if self.spec.family is Family.B and self.gc_point:
            x2, x3, _ = self.xi_derivatives(yy, j)
            # w = a / xi'' with a = orientation, regular through the stationary point
            w = self.orientation / x2
            wy = -self.orientation * x3 / x2 ** 2
        else:
            w, wy = self._weight(j)
        c, s = np.cos(ph), np.sin(ph)
        U = -w * j.P * c
        Uphi = w * j.P * s
        Uy = -(wy * j.P + w * j.P1) * c
        return tuple(v.reshape(shape) for v in (w, wy, U, Uphi, Uy))

    def hamiltonian(self, phi, y, p_phi, p_y):
        w, _, U, _, _ = self.hamiltonian_parts(phi, y)
        return 0.5 * w * (np.asarray(p_phi) ** 2 + np.asarray(p_y) ** 2) + U


@lru_cache(maxsize=64)
def build_metric(spec: HamiltonianSpec, T_ref: float | None = None) -> ConformalMetric:
    return ConformalMetric(spec, T_ref=T_ref)


def xi_second(spec: HamiltonianSpec, y):
    return build_metric(spec).xi_second(y)


def conformal_factor(spec: HamiltonianSpec, phi, y):
    return build_metric(spec).lam(phi, y)


@dataclass(frozen=True)
class LambdaScan:
    minimum: float
    maximum: float
    positive: bool
    sign_change: bool
    unbounded: bool
    n_points: int

    @property
    def degenerate(self):
        return not self.positive or self.unbounded

    def as_dict(self):
        return {"min": self.minimum, "max": self.maximum, "positive": self.positive,
                "sign_change": self.sign_change, "unbounded": self.unbounded,
                "degenerate": self.degenerate, "n_points": self.n_points}


def lambda_scan(spec: HamiltonianSpec, n_phi: int = 200, n_y: int = 200, y_lim: float = 8.0,
                unbounded_ratio: float = 1e6) -> LambdaScan:
    """Grid scan of lambda normalised by cosh(y)^2 (the round-sphere decay).

    The stationary point of a tau = T profile is added to the grid together
    with close neighbours so that a blow-up of xi'' there is seen.
    """
    met = build_metric(spec)
    phi = np.linspace(0.0, 2.0 * np.pi, n_phi, endpoint=False)
    y = np.linspace(-y_lim, y_lim, n_y)
    if met.profile.is_stationary:
        y0 = met.profile.y0
        y = np.unique(np.concatenate([y, y0 + np.array([-1e-3, -1e-6, 0.0, 1e-6, 1e-3])]))
    P, Y = np.meshgrid(phi, y, indexing="ij")
    with np.errstate(all="ignore"):
        lam = met.lam(P, Y) * np.cosh(Y) ** 2
    finite = np.isfinite(lam)
    lo = float(np.min(lam[finite])) if finite.any() else -math.inf
    hi = float(np.max(lam[finite])) if finite.any() else math.inf
    med = float(np.median(np.abs(lam[finite]))) if finite.any() else 1.0
    unbounded = (not finite.all()) or max(abs(lo), abs(hi)) > unbounded_ratio * max(med, 1e-300)
    positive = finite.all() and lo > 0.0
    sign_change = lo < 0.0 < hi or (not finite.all() and (lo < 0.0 or np.any(lam[~finite] < 0)))
    return LambdaScan(lo, hi, bool(positive), bool(sign_change), bool(unbounded), int(lam.size))


def hamiltonian_eval(spec: HamiltonianSpec, state) -> float:
    met = build_metric(spec)
    met.require_admissible()
    return float(met.hamiltonian(state.phi, state.y, state.p_phi, state.p_y))


# ---------------------------------------------------------------------------
# polar charts

class Chart(str, Enum):
    R = "r"              # r = e^y, pole at y -> -inf
    R_TILDE = "rt"       # r~ = e^-y, pole at y -> +inf


@dataclass(frozen=True, eq=False)
class PolarMetric:
    """lambda / r^2 = Psi1(r^2) r cos(phi) + Psi2(r^2) in the chart ``chart``.

    ``weight`` is W = w r^2, so H = W |p_cart|^2 / 2 - W Psi1 X with X = r cos(phi).
    """

    chart: Chart
    psi1: object
    psi2: object
    weight: object

    def lam_over_r2(self, rho, phi):
        rho = np.asarray(rho, dtype=float)
        return self.psi1(rho) * np.sqrt(rho) * np.cos(phi) + self.psi2(rho)

    def limits(self):
        return {"psi2": float(self.psi2(np.array([0.0]))[0]),
                "psi1_r": 0.0, "psi1": float(self.psi1(np.array([0.0]))[0])}

    def hamiltonian(self, X, Y, pX, pY):
        rho = np.asarray(X) ** 2 + np.asarray(Y) ** 2
        W = self.weight(rho)
        return 0.5 * W * (np.asarray(pX) ** 2 + np.asarray(pY) ** 2) - W * self.psi1(rho) * X

    def from_conformal(self, phi, y, p_phi, p_y):
        """Cartesian position and momenta of a state given in (phi, y)."""
        if self.chart is Chart.R:
            r = math.exp(y)
            c, s = math.cos(phi), math.sin(phi)
            return r * c, r * s, (c * p_y - s * p_phi) / r, (s * p_y + c * p_phi) / r
        r = math.exp(-y)
        c, s = math.cos(phi), math.sin(phi)
        return r * c, r * s, (-c * p_y - s * p_phi) / r, (-s * p_y + c * p_phi) / r


def polar_form(spec: HamiltonianSpec, chart) -> PolarMetric:
    try:
        chart = Chart(chart)
    except ValueError:
        raise ChartMismatch(f"unknown chart {chart!r}; expected 'r' or 'rt'") from None
    met = build_metric(spec)
    prof = met.profile
    gp = prof.g_minus if chart is Chart.R else prof.g_plus
    sgn = -1.0 if chart is Chart.R else 1.0
    fam_a = spec.family is Family.A

    def parts(rho):
        rho = np.atleast_1d(np.asarray(rho, dtype=float))
        g, g1, g2 = gp.evaluate(rho).T
        zeta = g - 2.0 * rho * g1
        m = 4.0 * g1 * (g - rho * g1)
        return g2, zeta, m

    def psi1(rho):
        g2, _, _ = parts(rho)
        return sgn * 4.0 * g2

    def psi2(rho):
        _, zeta, m = parts(rho)
        if fam_a:
            return met.c / zeta ** 2
        return met.a * (float(spec.b) - m) / zeta ** 2

    def weight(rho):
        _, zeta, m = parts(rho)
        if fam_a:
            return zeta ** 2
        return met.orientation * zeta ** 2 / (float(spec.b) - m)

    return PolarMetric(chart, psi1, psi2, weight)


@dataclass(frozen=True)
class PoleReport:
    chart: str
    r_fit: float
    residual_psi1: float
    residual_psi2: float
    limit_psi2: float
    limit_psi1: float
    limit_psi1_r: float
    bounded: bool
    smooth: bool

    def as_dict(self):
        return dict(self.__dict__)


def _pole_samples(met, chart, r):
    y = np.log(r) if chart is Chart.R else -np.log(r)
    with np.errstate(all="ignore"):
        try:
            x2 = met.xi_derivatives(y)[0]
        except DegenerateDerivative:
            x2 = np.full_like(y, np.inf)
        v1 = met.profile.jet(y).P / r ** 3
        v2 = x2 / r ** 2
    return v1, v2


def _even_fit(r, v, n_terms):
    if not np.all(np.isfinite(v)):
        return math.inf, math.nan
    fit = np.polynomial.Polynomial.fit(r ** 2, v, n_terms - 1)
    scale = max(float(np.max(np.abs(v))), 1e-300)
    return float(np.max(np.abs(fit(r ** 2) - v)) / scale), float(fit(0.0))


def pole_smoothness_check(spec: HamiltonianSpec, r_fit: float = 0.3, n_terms: int = 8, n: int = 200,
                          tol: float = 1e-6, shrink: int = 6):
    """Even power series fits of Psi1 and Psi2 in r near both poles.

    Samples come from the (phi, y) evaluators at y = log r (chart r) or
    y = -log r~ (chart rt).  The fit radius is reduced by factors of 3 until
    both fits reach ``tol``; the fitted r = 0 values are compared with the
    pole data of the g-functions.  Psi2 must also stay bounded on the whole
    chart r in (0, 1], stationary point included.
    """
    met = build_metric(spec)
    reports = []
    for chart in (Chart.R, Chart.R_TILDE):
        pm = polar_form(spec, chart)
        refs = (float(pm.psi2(np.array([0.0]))[0]), float(pm.psi1(np.array([0.0]))[0]))
        rr = np.geomspace(1e-6, 1.0, 400)
        if met.profile.is_stationary:
            y0 = met.profile.y0
            r0 = math.exp(y0) if chart is Chart.R else math.exp(-y0)
            if r0 <= 1.0:
                rr = np.sort(np.append(rr, r0))
        _, whole = _pole_samples(met, chart, rr)
        bounded = bool(np.all(np.isfinite(whole)))
        best = None
        radius = r_fit
        for _ in range(shrink):
            r = np.linspace(radius / n, radius, n)
            v1, v2 = _pole_samples(met, chart, r)
            res2, lim2 = _even_fit(r, v2, n_terms)
            res1, lim1 = _even_fit(r, v1, n_terms)
            res2 = max(res2, abs(lim2 - refs[0]) / max(1.0, abs(refs[0])))
            res1 = max(res1, abs(lim1 - refs[1]) / max(1.0, abs(refs[1])))
            best = (radius, res1, res2, lim2, lim1)
            if max(res1, res2) <= tol:
                break
            radius /= 3.0
        radius, res1, res2, lim2, lim1 = best
        smooth = bounded and max(res1, res2) <= tol
        reports.append(PoleReport(chart.value, radius, res1, res2, lim2, lim1,
                                  0.0 if math.isfinite(lim1) else math.nan, bounded, bool(smooth)))
    return reports


# ---------------------------------------------------------------------------
# curvature and consistency checks

def gaussian_curvature(spec: HamiltonianSpec, phi, y):
    """K = -Laplacian(log lambda) / (2 lambda) from analytic derivatives."""
    met = build_metric(spec)
    lam, lp, ly, lpp, _, lyy = met.lam_derivatives(phi, y)
    if np.any(~(lam > 0)):
        raise NonPositiveLambda("lambda <= 0 where curvature was requested")
    lap = (lpp + lyy) / lam - (lp ** 2 + ly ** 2) / lam ** 2
    return -lap / (2.0 * lam)


def xi_ode_residual(spec: HamiltonianSpec, y, h: float = 1e-3):
    """2 xi'' psi'' + xi''' psi' - 2 a P with (xi'' psi')' by central differences."""
    met = build_metric(spec)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    st = np.array([-2.0, -1.0, 1.0, 2.0]) * h
    yy = (y[:, None] + st[None, :]).ravel()
    prod = (met.xi_derivatives(yy)[0] * met.profile.jet(yy).psi1).reshape(y.size, 4)
    dprod = (prod[:, 0] - 8.0 * prod[:, 1] + 8.0 * prod[:, 2] - prod[:, 3]) / (12.0 * h)
    j = met.profile.jet(y)
    x2 = met.xi_derivatives(y, j)[0]
    terms = (x2 * j.psi2, dprod, 2.0 * met.a * j.P)
    res = terms[0] + terms[1] - terms[2]
    return res / np.maximum(1.0, sum(np.abs(t) for t in terms))


def f_laplacian_residual(spec: HamiltonianSpec, phi, y, h: float = 1e-2):
    """lambda - (f_phiphi + f_yy) with the Laplacian of f by 4th-order differences."""
    met = build_metric(spec)
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    w = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / (12.0 * h * h)
    st = np.array([-2.0, -1.0, 0.0, 1.0, 2.0]) * h
    fphi = met.f_value(phi[:, None] + st[None, :], np.repeat(y[:, None], 5, axis=1)) @ w
    fy = met.f_value(np.repeat(phi[:, None], 5, axis=1), y[:, None] + st[None, :]) @ w
    lam = met.lam(phi, y)
    return (lam - fphi - fy) / np.maximum(1.0, np.abs(lam))


__all__ = [
    "PsiJet", "PsiProfile", "build_psi", "Family", "HamiltonianSpec", "BBounds", "b_bounds",
    "b_bounds_via_phi", "ConformalMetric", "build_metric", "xi_second", "conformal_factor",
    "LambdaScan", "lambda_scan", "hamiltonian_eval", "Chart", "PolarMetric", "polar_form",
    "PoleReport", "pole_smoothness_check", "gaussian_curvature", "xi_ode_residual",
    "f_laplacian_residual",
]
