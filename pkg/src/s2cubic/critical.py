"""The critical parameter T and the boundary functions attached to it.

``tau_probe`` decides whether the solution with x''(0) = tau keeps x' > 0 on
the whole line; ``find_T_bisection`` brackets the switch.  The g-function
g(s) = sqrt(s) x(-log(s)/2) maps t in [0, inf) to s in (0, 1] and is
regular at s = 0, which gives the behaviour of x at t -> +inf; the same
function for -tau covers t -> -inf through x_tau(t) = -x_{-tau}(-t).

At tau = T the solution has a single stationary point.  Around it the
solution is, up to translation and scale, the even solution Theta with
Theta(0) = 1, Theta''(0) = -1/2, expanded here as an exact power series.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from . import kernels
from .errors import BracketFailure, DomainError, Inconclusive, SingularDenominator, StepSizeUnderflow
from .ode_core import EPS_DEN, ZERO_DT, ZERO_TOL, third_derivative

PROBE_DISK = 1e-6
BLOWUP_SCALED = 1e12
G_ZERO_TOL = 1e-10
RICHARDSON_S = (1e-2, 1e-3, 1e-4)


class ProbeOutcome(str, Enum):
    GLOBAL_POSITIVE = "global_positive"
    DERIVATIVE_ZERO = "derivative_zero"
    BLOWUP = "blowup"


@dataclass(frozen=True)
class ProbeResult:
    tau: float
    outcome: ProbeOutcome
    t: float | None = None

    @property
    def positive(self):
        return self.outcome is ProbeOutcome.GLOBAL_POSITIVE


def tau_probe(tau: float, t_max: float = 40.0) -> ProbeResult:
    """Classify the solution with parameter ``tau``.

    Both time directions are followed: the reduced orbit must settle within
    1e-6 of the node (q, p) = (1, 0) as t -> +inf and of (-1, 0) as
    t -> -inf while x' stays positive.  Breakdown of positivity for large
    tau happens at negative times.
    """
    if t_max < 30.0:
        raise ValueError("t_max must be at least 30")
    for direction, node_q in ((-1.0, -1.0), (1.0, 1.0)):
        params = [EPS_DEN, BLOWUP_SCALED, ZERO_TOL, PROBE_DISK, node_q, ZERO_DT]
        ts, ys, _, status, ev = kernels.integrate(kernels.SYS_JET, 0.0, direction * t_max,
                                                  [0.0, 1.0, tau], params)
        if status == kernels.ST_EVENT and ev == 0:
            return ProbeResult(tau, ProbeOutcome.DERIVATIVE_ZERO, float(ts[-1]))
        if status == kernels.ST_EVENT and ev == 1:
            return ProbeResult(tau, ProbeOutcome.BLOWUP, float(ts[-1]))
        if status in (kernels.ST_SINGULAR, kernels.ST_UNDERFLOW):
            # the step size collapsed just before x' reached the threshold
            return ProbeResult(tau, ProbeOutcome.DERIVATIVE_ZERO, float(ts[-1]))
        if not (status == kernels.ST_EVENT and ev == 2):
            raise Inconclusive(f"tau = {tau!r}: no decision within |t| <= {t_max}")
    return ProbeResult(tau, ProbeOutcome.GLOBAL_POSITIVE)


class CriticalMethod(str, Enum):
    BISECTION = "bisection"
    SEPARATRIX = "separatrix"
    STATIONARY = "stationary"


@dataclass(frozen=True)
class CriticalResult:
    T: float
    method: CriticalMethod
    bracket_width: float | None = None
    fit_residual: float | None = None
    bracket: tuple | None = None
    n_probes: int = 0

    def as_dict(self):
        return {"T": self.T, "method": self.method.value, "bracket_width": self.bracket_width,
                "fit_residual": self.fit_residual,
                "bracket": list(self.bracket) if self.bracket else None, "n_probes": self.n_probes}


def find_T_bisection(tol: float = 1e-10, bracket=(0.0, 16.0), t_max: float = 40.0) -> CriticalResult:
    if not tol >= 1e-10:
        raise ValueError(f"tol must be at least 1e-10, got {tol!r}")
    lo, hi = (float(v) for v in bracket)
    if not (0.0 <= lo < hi <= 16.0):
        raise ValueError("bracket must lie in [0, 16]")
    n = 2
    if not tau_probe(lo, t_max).positive:
        raise BracketFailure(f"tau = {lo} is not globally positive")
    if tau_probe(hi, t_max).positive:
        raise BracketFailure(f"tau = {hi} is still globally positive")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        n += 1
        if tau_probe(mid, t_max).positive:
            lo = mid
        else:
            hi = mid
    return CriticalResult(0.5 * (lo + hi), CriticalMethod.BISECTION, hi - lo, None, (lo, hi), n)


def find_T_separatrix(q_max: float = 200.0) -> CriticalResult:
    from .phase_plane import estimate_T_from_separatrix

    est = estimate_T_from_separatrix(q_max)
    return CriticalResult(est.value, CriticalMethod.SEPARATRIX, None, est.residual)


# ---------------------------------------------------------------------------
# even solution through the stationary point

def _series_coefficients(n_terms: int, c1=Fraction(-1, 4)):
    """Exact coefficients c_k of Theta(t) = sum c_k t^(2k) with c_0 = 1."""
    c = [Fraction(1), Fraction(c1)] + [Fraction(0)] * (n_terms - 2)

    def deriv(coeffs, order):
        # coefficient lists indexed by power of t
        out = coeffs[:]
        for _ in range(order):
            out = [i * out[i] for i in range(1, len(out))] + [Fraction(0)]
        return out

    def residual_at(power, coeffs):
        full = [Fraction(0)] * (2 * len(coeffs))
        for k, v in enumerate(coeffs):
            full[2 * k] = v
        x0, x1, x2, x3 = full, deriv(full, 1), deriv(full, 2), deriv(full, 3)

        def conv(a, b):
            return sum(a[i] * b[power - i] for i in range(power + 1) if power - i < len(b))

        return (conv(x1, x3) - conv(x0, x2) + 2 * conv(x2, x2) - conv(x1, x1) - conv(x0, x0))

    for n in range(1, n_terms - 1):
        # the t^(2n) balance is linear in c_(n+1)
        c[n + 1] = Fraction(0)
        base = residual_at(2 * n, c)
        c[n + 1] = Fraction(1)
        slope = residual_at(2 * n, c) - base
        c[n + 1] = -base / slope
    return c


SERIES = tuple(_series_coefficients(22))
SERIES_RADIUS_USED = 0.5


def _theta_poly():
    full = np.zeros(2 * len(SERIES) - 1)
    full[::2] = [float(v) for v in SERIES]
    base = np.polynomial.Polynomial(full)
    return tuple(base.deriv(k) if k else base for k in range(5))


_THETA_POLYS = _theta_poly()


def theta_series(u, order=2):
    """Theta and its derivatives up to ``order`` (<= 4) from the power series.

    Accurate to rounding for |u| <= 0.5.
    """
    u = np.asarray(u, dtype=float)
    return tuple(_THETA_POLYS[k](u) for k in range(order + 1))


@dataclass(frozen=True, eq=False)
class StationarySolution:
    """Even solution Theta; evaluated by its series near 0 and by dense output elsewhere.

    Integration runs from -u_c towards -u_max where Theta' > 0; evenness
    supplies positive arguments.
    """

    u_c: float
    u_max: float
    ts: np.ndarray
    ys: np.ndarray
    coeffs: np.ndarray
    t_star: float
    slope_star: float

    def evaluate(self, u):
        """(Theta, Theta', Theta'') at ``u``; shape (n, 3)."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if np.any(np.abs(u) > self.u_max):
            raise DomainError(f"|u| > {self.u_max}")
        out = np.empty((u.size, 3))
        near = np.abs(u) <= self.u_c
        if near.any():
            out[near] = np.column_stack(theta_series(u[near]))
        far = ~near
        if far.any():
            a = -np.abs(u[far])
            v, _ = kernels.dense_eval(self.ts, self.ys, self.coeffs, a)
            flip = u[far] > 0
            v[flip, 1] *= -1.0
            out[far] = v
        return out

    @property
    def T(self):
        """x''(0)/x'(0) of the normalised solution through the zero of Theta."""
        v = self.evaluate([self.t_star])[0]
        return float(v[2] / v[1])

    @property
    def amplitude(self):
        """|x(y0)| for the solution normalised by x(0) = 0, x'(0) = 1."""
        return 1.0 / abs(self.slope_star)


@lru_cache(maxsize=None)
def stationary_solution(u_c: float = SERIES_RADIUS_USED, u_max: float = 12.0) -> StationarySolution:
    v, d1, d2 = theta_series(np.array([-u_c]))
    y0 = [v[0], d1[0], d2[0]]
    ts, ys, F, st, _ = kernels.integrate(kernels.SYS_JET, -u_c, -u_max, y0,
                                         [EPS_DEN, 1e300, -1.0, 0.0, 0.0, 0.0],
                                         rtol=1e-13, atol=1e-15)
    if st != kernels.ST_DONE:
        raise StepSizeUnderflow("stationary solution integration failed", t_last=float(ts[-1]))

    def theta(t):
        val, _ = kernels.dense_eval(ts, ys, F, [t])
        return val[0, 0]

    grid = ts[ts >= -4.0]
    idx = np.flatnonzero(np.sign([theta(t) for t in grid[:-1]]) != np.sign([theta(t) for t in grid[1:]]))
    a, b = float(grid[idx[0]]), float(grid[idx[0] + 1])
    zero = brentq(theta, b, a, xtol=1e-15, rtol=1e-15)
    t_star = -zero
    val, _ = kernels.dense_eval(ts, ys, F, [zero])
    slope_star = -float(val[0, 1])      # Theta'(t_star) by evenness
    return StationarySolution(u_c, u_max, ts, ys, F, t_star, slope_star)


# ---------------------------------------------------------------------------
# g-function

@dataclass(frozen=True, eq=False)
class _GPiece:
    s_lo: float
    s_hi: float
    evaluator: object


@dataclass(frozen=True, eq=False)
class GProfile:
    """g, g', g'' on s in [0, 1] with g(1) = 0, g'(1) = -1/2, g''(1) = tau/4."""

    tau: float
    s: np.ndarray
    g: np.ndarray
    g1: np.ndarray
    g2: np.ndarray
    g0: float
    g1_0: float
    g2_0: float
    richardson_residual: float
    pieces: tuple = field(repr=False, default=())

    @property
    def limits(self):
        return self.g0, self.g1_0, self.g2_0

    def evaluate(self, s):
        """Rows (g, g', g'') at the given s values."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if np.any(s < 0.0) or np.any(s > 1.0):
            raise DomainError("s must lie in [0, 1]")
        out = np.empty((s.size, 3))
        done = np.zeros(s.size, dtype=bool)
        for piece in self.pieces:
            m = (s >= piece.s_lo) & (s <= piece.s_hi) & ~done
            if m.any():
                out[m] = piece.evaluator(s[m])
                done |= m
        return out

    def zeta(self, s):
        g, g1, _ = self.evaluate(s).T
        return g - 2.0 * np.asarray(s, dtype=float) * g1

    def m_value(self, s):
        """4 g' (g - s g'), which equals psi^2 - psi'^2 in this chart."""
        g, g1, _ = self.evaluate(s).T
        return 4.0 * g1 * (g - np.asarray(s, dtype=float) * g1)


def _dense_piece(ts, ys, F):
    def ev(s):
        v, _ = kernels.dense_eval(ts, ys, F, s)
        return v
    return ev


def _richardson(profile_eval, direct):
    pts = np.array(RICHARDSON_S)
    vals = profile_eval(pts)
    # quadratic through the three samples, evaluated at s = 0
    w = np.array([pts[1] * pts[2] / ((pts[0] - pts[1]) * (pts[0] - pts[2])),
                  pts[0] * pts[2] / ((pts[1] - pts[0]) * (pts[1] - pts[2])),
                  pts[0] * pts[1] / ((pts[2] - pts[0]) * (pts[2] - pts[1]))])
    extrap = w @ vals
    return float(np.max(np.abs(extrap - direct) / np.maximum(1.0, np.abs(direct))))


def _gode(s0, y0, zero_tol=G_ZERO_TOL):
    params = [1e-14, 1e12, zero_tol]
    ts, ys, F, st, ev = kernels.integrate(kernels.SYS_GODE, s0, 0.0, y0, params,
                                          rtol=1e-13, atol=1e-15)
    if st == kernels.ST_EVENT and ev == 0:
        raise SingularDenominator(f"g - 2 s g' vanished near s = {ts[-1]!r}")
    if st != kernels.ST_DONE:
        raise SingularDenominator(f"g-equation integration stopped at s = {ts[-1]!r} (status {st})")
    return ts, ys, F


def _stationary_g(T_ref: float):
    """g for the parameter -T, built from the even solution.

    x_{-T}(t) = alpha Theta(t - t*), alpha = -1/Theta'(t*); its g-function has
    g - 2 s g' = 0 at s = exp(-2 t*).  Between s = 1 and s_c the profile comes
    from Theta; below s_c the g-equation is integrated with the sign guard
    disabled since g - 2 s g' < 0 there.
    """
    sol = stationary_solution()
    alpha = 1.0 / abs(sol.slope_star)
    t_c = sol.t_star + 2.0
    s_c = math.exp(-2.0 * t_c)

    def from_theta(s):
        s = np.asarray(s, dtype=float)
        t = -0.5 * np.log(s)
        th = sol.evaluate(t - sol.t_star) * alpha
        x, x1, x2 = th.T
        rs = np.sqrt(s)
        g = rs * x
        g1 = (x - x1) / (2.0 * rs)
        g2 = (x2 - x) / (4.0 * s * rs)
        return np.column_stack([g, g1, g2])

    start = from_theta([s_c])[0]
    ts, ys, F = _gode(s_c, start, zero_tol=-1e300)
    pieces = (_GPiece(s_c, 1.0, from_theta), _GPiece(0.0, s_c, _dense_piece(ts, ys, F)))
    return pieces, ys[-1], ts, ys


@lru_cache(maxsize=64)
def _solve_g_cached(tau: float, stationary: bool):
    if stationary:
        pieces, last, ts, ys = _stationary_g(tau)
        s_nodes = np.concatenate([np.linspace(1.0, pieces[0].s_lo, 200), ts[1:]])
    else:
        ts, ys, F = _gode(1.0, [0.0, -0.5, 0.25 * tau])
        pieces = (_GPiece(0.0, 1.0, _dense_piece(ts, ys, F)),)
        last = ys[-1]
        s_nodes = ts
    probe = GProfile(tau, np.array([]), np.array([]), np.array([]), np.array([]),
                     *map(float, last), 0.0, pieces)
    vals = probe.evaluate(s_nodes)
    resid = _richardson(probe.evaluate, np.asarray(last, dtype=float))
    return GProfile(tau, s_nodes, vals[:, 0], vals[:, 1], vals[:, 2], *map(float, last), resid, pieces)


def solve_g(tau: float, T_ref: float | None = None, stationary_tol: float = 1e-9) -> GProfile:
    """Integrate the g-equation from s = 1 to s = 0.

    When ``tau`` is within ``stationary_tol`` of -T (``T_ref`` defaults to the
    stored fixture) the profile is assembled from the even solution, because
    g - 2 s g' then has an interior zero that direct integration cannot cross.
    """
    tau = float(tau)
    if T_ref is None:
        from .fixture import default_T
        T_ref = default_T()
    stationary = abs(tau + T_ref) <= stationary_tol
    return _solve_g_cached(tau, stationary)


@dataclass(frozen=True)
class PoleValues:
    xi: np.ndarray
    zeta: np.ndarray
    mu: np.ndarray
    nu: np.ndarray


def pole_functions(tau: float, s, T_ref: float | None = None) -> PoleValues:
    """xi, zeta, mu, nu at ``s``.

    x'(t) = e^t zeta(e^{-2t}) = e^{-t} xi(e^{2t}) and
    (x'' - x) x'^2 = e^{-t} nu(e^{-2t}) = e^t mu(e^{2t}); zeta, nu describe
    t -> +inf and xi, mu describe t -> -inf.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    plus = solve_g(tau, T_ref)
    minus = solve_g(-tau, T_ref)
    g, g1, g2 = plus.evaluate(s).T
    zeta = g - 2.0 * s * g1
    nu = 4.0 * g2 * zeta * zeta
    gm, gm1, gm2 = minus.evaluate(s).T
    xi = gm - 2.0 * s * gm1
    mu = -4.0 * gm2 * xi * xi
    return PoleValues(xi, zeta, mu, nu)


def jet_residual(x, x1, x2, x3):
    """Scaled residual of the third-order equation."""
    return (x1 * x3 - (x * x2 - 2.0 * x2 * x2 + x1 * x1 + x * x)) / np.maximum(
        1.0, np.abs(x1 * x3) + np.abs(x * x2) + 2 * x2 * x2 + x1 * x1 + x * x)


__all__ = [
    "ProbeOutcome", "ProbeResult", "tau_probe", "CriticalMethod", "CriticalResult",
    "find_T_bisection", "find_T_separatrix", "SERIES", "theta_series", "StationarySolution",
    "stationary_solution", "GProfile", "solve_g", "PoleValues", "pole_functions",
    "third_derivative", "jet_residual",
]
