"""The cubic integral built from f and its numerical verification.

For a conformal metric lambda (dphi^2 + dy^2) with lambda = f_phiphi + f_yy the
function

    F = 2 Re[p_z^3 + a1 p_z^2 conj(p_z)],   p_z = (p_phi - i p_y) / 2,
    a1 = (-3 (f_phiphi - f_yy) + 6 i f_phiy) / lambda

Poisson-commutes with the geodesic Hamiltonian |p|^2 / (2 lambda) whenever f
satisfies the integrability equation.  For the conservative systems the same
formula is applied to the Jacobi metric at the energy of the state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ChartExit, DegenerateMetric, StepSizeUnderflow
from .metric import Chart, ConformalMetric, HamiltonianSpec, build_metric

H_FD = np.finfo(float).eps ** (1.0 / 3.0)
Y_EXIT = 8.0


@dataclass(frozen=True)
class CotangentState:
    phi: float
    y: float
    p_phi: float
    p_y: float

    def __post_init__(self):
        vals = (self.phi, self.y, self.p_phi, self.p_y)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite state {vals}")
        object.__setattr__(self, "phi", float(self.phi) % (2.0 * math.pi))
        for name in ("y", "p_phi", "p_y"):
            object.__setattr__(self, name, float(getattr(self, name)))

    def as_array(self):
        return np.array([self.phi, self.y, self.p_phi, self.p_y])

    @classmethod
    def from_array(cls, v):
        return cls(*(float(x) for x in v))


class FlowMode(str, Enum):
    GEODESIC = "geodesic"
    CONSERVATIVE = "conservative"


# ---------------------------------------------------------------------------
# metric sources

class TrigControlMetric:
    """lambda = 2 + cos(phi) cos(2y) with f = y^2 - cos(phi) cos(2y) / 5.

    A metric without a cubic integral of the above form, used as a negative control.
    """

    def lam_derivatives(self, phi, y):
        phi, y = np.broadcast_arrays(np.asarray(phi, dtype=float), np.asarray(y, dtype=float))
        c, s = np.cos(phi), np.sin(phi)
        c2, s2 = np.cos(2 * y), np.sin(2 * y)
        return (2.0 + c * c2, -s * c2, -2.0 * c * s2, -c * c2, 2.0 * s * s2, -4.0 * c * c2)

    def lam(self, phi, y):
        return self.lam_derivatives(phi, y)[0]

    def f_second(self, phi, y):
        phi, y = np.broadcast_arrays(np.asarray(phi, dtype=float), np.asarray(y, dtype=float))
        c, s = np.cos(phi), np.sin(phi)
        c2, s2 = np.cos(2 * y), np.sin(2 * y)
        return 0.2 * c * c2, 2.0 + 0.8 * c * c2, -0.4 * s * s2

    def f_third(self, phi, y):
        phi, y = np.broadcast_arrays(np.asarray(phi, dtype=float), np.asarray(y, dtype=float))
        c, s = np.cos(phi), np.sin(phi)
        c2, s2 = np.cos(2 * y), np.sin(2 * y)
        return -0.2 * s * c2, -0.4 * c * s2, -0.8 * s * c2, -1.6 * c * s2

    def f_value(self, phi, y):
        phi, y = np.broadcast_arrays(np.asarray(phi, dtype=float), np.asarray(y, dtype=float))
        return y ** 2 - 0.2 * np.cos(phi) * np.cos(2 * y)


def _source(spec):
    if isinstance(spec, HamiltonianSpec):
        return build_metric(spec)
    return spec


# ---------------------------------------------------------------------------
# coefficients and the integral

def a1_from_second(fpp, fyy, fpy, lam=None):
    """``lam`` may be passed when fpp + fyy would cancel (near the poles)."""
    if lam is None:
        lam = fpp + fyy
    if np.any(~(lam > 0)):
        raise DegenerateMetric("lambda <= 0 where a1 was requested")
    return (-3.0 * (fpp - fyy) + 6j * fpy) / lam


def a1_eval(spec, phi, y):
    """a1 at (phi, y) from the analytic second derivatives of f."""
    src = _source(spec)
    return a1_from_second(*src.f_second(phi, y), lam=src.lam(phi, y))


def a1_finite_difference(spec, phi, y, h: float = 5e-3):
    """a1 from 4th-order differences of f itself (independent of the closed forms)."""
    src = _source(spec)
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    w2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / (12.0 * h * h)
    w1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / (12.0 * h)
    st = np.array([-2.0, -1.0, 0.0, 1.0, 2.0]) * h
    n = phi.size
    fpp = src.f_value(phi[:, None] + st, np.repeat(y[:, None], 5, axis=1)) @ w2
    fyy = src.f_value(np.repeat(phi[:, None], 5, axis=1), y[:, None] + st) @ w2
    grid = src.f_value((phi[:, None, None] + st[None, :, None]) + 0.0 * st[None, None, :],
                       (y[:, None, None] + st[None, None, :]) + 0.0 * st[None, :, None])
    fpy = np.einsum("nij,i,j->n", grid.reshape(n, 5, 5), w1, w1)
    return a1_from_second(fpp, fyy, fpy)


def cubic_form(a1, p_phi, p_y):
    pz = 0.5 * (np.asarray(p_phi) - 1j * np.asarray(p_y))
    return 2.0 * np.real(pz ** 3 + a1 * pz ** 2 * np.conj(pz))


def cubic_form_complex(a1, p_phi, p_y):
    """p_z^3 + a1 p_z^2 conj(p_z) + conj(a1) p_z conj(p_z)^2 + conj(p_z)^3 without taking Re."""
    pz = 0.5 * (np.asarray(p_phi) - 1j * np.asarray(p_y))
    pb = np.conj(pz)
    return pz ** 3 + a1 * pz ** 2 * pb + np.conj(a1) * pz * pb ** 2 + pb ** 3


def cubic_integral_eval(spec, state: CotangentState) -> float:
    """F for the geodesic flow of lambda (dphi^2 + dy^2)."""
    a1 = a1_eval(spec, state.phi, state.y)
    return float(cubic_form(a1, state.p_phi, state.p_y))


@dataclass(frozen=True)
class CubicCoefficients:
    """a1 over (phi, y) and b1 = a1 |w|^2 w over the polar chart w = r e^{i phi}."""

    a1: object
    b1_polar: object
    chart: Chart = Chart.R
    a2: object = None


def cubic_coefficients(spec, chart=Chart.R) -> CubicCoefficients:
    chart = Chart(chart)

    def a1(phi, y):
        return a1_eval(spec, phi, y)

    def b1(w):
        w = np.asarray(w, dtype=complex)
        r = np.abs(w)
        y = np.log(r) if chart is Chart.R else -np.log(r)
        return a1(np.angle(w), y) * r ** 2 * w

    return CubicCoefficients(a1, b1, chart)


# ---------------------------------------------------------------------------
# Hamiltonians as functions of z = (phi, y, p_phi, p_y)

class _Model:
    """Hamiltonian and cubic integral for one spec and flow mode."""

    def __init__(self, spec, mode):
        self.mode = FlowMode(mode)
        self.source = _source(spec)
        if self.mode is FlowMode.CONSERVATIVE:
            if not isinstance(self.source, ConformalMetric):
                raise ValueError("conservative mode needs a family A or B spec")
            self.source.require_admissible()

    def hamiltonian(self, z):
        z = np.asarray(z, dtype=float)
        phi, y, pp, py = z[..., 0], z[..., 1], z[..., 2], z[..., 3]
        if self.mode is FlowMode.GEODESIC:
            return 0.5 * (pp ** 2 + py ** 2) / self.source.lam(phi, y)
        return self.source.hamiltonian(phi, y, pp, py)

    def integral(self, z):
        z = np.asarray(z, dtype=float)
        phi, y, pp, py = z[..., 0], z[..., 1], z[..., 2], z[..., 3]
        if self.mode is FlowMode.GEODESIC:
            return cubic_form(a1_eval(self.source, phi, y), pp, py)
        return self._lifted(phi, y, pp, py)

    def _lifted(self, phi, y, pp, py):
        # Jacobi metric at E = H: family A replaces c by E, family B scales a by E
        met = self.source
        E = met.hamiltonian(phi, y, pp, py)
        phi, y, E = np.broadcast_arrays(np.asarray(phi, dtype=float), np.asarray(y, dtype=float), E)
        shape = phi.shape
        ph, yy, EE = phi.ravel(), y.ravel(), E.ravel()
        j = met.profile.jet(yy)
        base = met.with_energy(1.0)
        x2 = base.xi_derivatives(yy, j)[0] * EE
        a = base.a * EE
        c, s = np.cos(ph), np.sin(ph)
        fpp = -j.psi * c + 2.0 * a
        fyy = j.psi2 * c + x2 - 2.0 * a
        fpy = -j.psi1 * s
        a1 = a1_from_second(fpp, fyy, fpy, lam=j.P * c + x2).reshape(shape)
        return cubic_form(a1, pp, py)

    def rhs(self, t, z):
        phi, y, pp, py = z
        if self.mode is FlowMode.GEODESIC:
            lam, lp, ly, _, _, _ = self.source.lam_derivatives(np.array([phi]), np.array([y]))
            lam, lp, ly = lam[0], lp[0], ly[0]
            k = 0.5 * (pp * pp + py * py) / (lam * lam)
            return [pp / lam, py / lam, k * lp, k * ly]
        w, wy, _, Up, Uy = (v[0] for v in self.source.hamiltonian_parts(np.array([phi]), np.array([y])))
        return [w * pp, w * py, -Up, -0.5 * wy * (pp * pp + py * py) - Uy]


def bracket_residual(spec, state: CotangentState, mode="conservative", integral=None,
                     normalize: bool = True) -> float:
    """{F, H} by central differences; normalised by |grad F| |grad H| unless ``normalize`` is False.

    ``integral`` replaces F by any callable of the state array (negative controls).
    """
    model = _Model(spec, mode)
    F = integral if integral is not None else model.integral
    z0 = state.as_array()
    gF = np.empty(4)
    gH = np.empty(4)
    for i in range(4):
        h = H_FD * max(1.0, abs(z0[i]))
        zp, zm = z0.copy(), z0.copy()
        zp[i] += h
        zm[i] -= h
        gF[i] = (F(zp) - F(zm)) / (2.0 * h)
        gH[i] = (model.hamiltonian(zp) - model.hamiltonian(zm)) / (2.0 * h)
    br = gF[0] * gH[2] - gF[2] * gH[0] + gF[1] * gH[3] - gF[3] * gH[1]
    if not normalize:
        return float(abs(br))
    return float(abs(br) / max(np.linalg.norm(gF) * np.linalg.norm(gH), 1e-300))


@dataclass(frozen=True, eq=False)
class FlowResult:
    t: np.ndarray
    states: np.ndarray
    energy: np.ndarray
    integral: np.ndarray
    mode: FlowMode

    @property
    def energy_drift(self):
        return float(np.max(np.abs(self.energy - self.energy[0])) / max(abs(self.energy[0]), 1e-300))

    @property
    def integral_drift(self):
        return float(np.max(np.abs(self.integral - self.integral[0])) / max(1.0, abs(self.integral[0])))


def integrate_flow(spec, state: CotangentState, horizon: float, mode="conservative",
                   rtol: float = 1e-12, atol: float = 1e-13, y_exit: float = Y_EXIT) -> FlowResult:
    """Hamilton's equations by an adaptive 8th-order Runge-Kutta method.

    Raises ChartExit when |y| exceeds ``y_exit`` (the orbit approaches a pole,
    where the (phi, y) chart degenerates).
    """
    model = _Model(spec, mode)

    def leave(t, z):
        return y_exit - abs(z[1])

    leave.terminal = True
    sol = solve_ivp(model.rhs, (0.0, horizon), state.as_array(), method="DOP853", rtol=rtol,
                    atol=atol, events=leave)
    if sol.status == 1:
        raise ChartExit(f"|y| reached {y_exit} at t = {sol.t_events[0][0]:.4g}")
    if sol.status != 0:
        raise StepSizeUnderflow(sol.message, t_last=float(sol.t[-1]))
    z = sol.y.T
    return FlowResult(sol.t, z, model.hamiltonian(z), model.integral(z), model.mode)


def conservation_drift(spec, state: CotangentState, horizon: float = 10.0, mode="conservative") -> float:
    """max_t |F(t) - F(0)| / max(1, |F(0)|) along the flow."""
    return integrate_flow(spec, state, horizon, mode).integral_drift


def random_states(n: int, seed: int = 0, y_max: float = 1.5, p_scale: float = 1.0):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        yield CotangentState(rng.uniform(0.0, 2.0 * np.pi), rng.uniform(-y_max, y_max),
                             *(p_scale * rng.normal(size=2)))


@dataclass(frozen=True)
class DriftSummary:
    max_drift: float
    max_energy_drift: float
    n_trajectories: int
    n_resampled: int

    def as_dict(self):
        return dict(self.__dict__)


def drift_survey(spec, n: int = 20, horizon: float = 10.0, mode="conservative", seed: int = 0,
                 max_draws: int = 200) -> DriftSummary:
    """Drift over ``n`` random trajectories; those reaching a pole are replaced."""
    drifts, energies, resampled = [], [], 0
    for st in random_states(max_draws, seed):
        if len(drifts) == n:
            break
        try:
            res = integrate_flow(spec, st, horizon, mode)
        except ChartExit:
            resampled += 1
            continue
        drifts.append(res.integral_drift)
        energies.append(res.energy_drift)
    if len(drifts) < n:
        raise ChartExit(f"only {len(drifts)} of {n} trajectories stayed inside the chart")
    return DriftSummary(max(drifts), max(energies), n, resampled)


# ---------------------------------------------------------------------------
# integrability PDE

def _fd_stencil(h):
    st = np.array([-2.0, -1.0, 0.0, 1.0, 2.0]) * h
    w1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / (12.0 * h)
    w2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / (12.0 * h * h)
    return st, w1, w2


def _fd_second(f, phi, y, h):
    st, w1, w2 = _fd_stencil(h)
    fpp = sum(w * f(phi + d, y) for w, d in zip(w2, st))
    fyy = sum(w * f(phi, y + d) for w, d in zip(w2, st))
    fpy = sum(wi * wj * f(phi + di, y + dj) for wi, di in zip(w1, st) for wj, dj in zip(w1, st)
              if wi != 0.0 and wj != 0.0)
    return fpp, fyy, fpy


def eqpde_residual(f_spec, phi, y, h: float = 1e-2):
    """d/dphi[(f_pp - f_yy)(f_pp + f_yy)] - 2 d/dy[f_py (f_pp + f_yy)], scaled.

    ``f_spec`` is a HamiltonianSpec (or metric object with analytic
    derivatives) or a plain callable f(phi, y), differentiated numerically.
    """
    phi, y = np.broadcast_arrays(np.asarray(phi, dtype=float), np.asarray(y, dtype=float))
    if callable(f_spec) and not isinstance(f_spec, HamiltonianSpec) and not hasattr(f_spec, "f_second"):
        st, w1, _ = _fd_stencil(h)

        def q(ph, yy):
            fpp, fyy, fpy = _fd_second(f_spec, ph, yy, h)
            return (fpp - fyy) * (fpp + fyy), fpy * (fpp + fyy)

        lhs = sum(w * q(phi + d, y)[0] for w, d in zip(w1, st) if w != 0.0)
        rhs = 2.0 * sum(w * q(phi, y + d)[1] for w, d in zip(w1, st) if w != 0.0)
        return (lhs - rhs) / np.maximum(1.0, np.abs(lhs) + np.abs(rhs))
    src = _source(f_spec)
    fpp, fyy, fpy = src.f_second(phi, y)
    fppp, fppy, fpyy, fyyy = src.f_third(phi, y)
    lam = fpp + fyy
    lhs = (fppp - fpyy) * lam + (fpp - fyy) * (fppp + fpyy)
    rhs = 2.0 * (fpyy * lam + fpy * (fppy + fyyy))
    scale = (np.abs(fppp - fpyy) * np.abs(lam) + np.abs(fpp - fyy) * np.abs(fppp + fpyy)
             + 2.0 * (np.abs(fpyy * lam) + np.abs(fpy * (fppy + fyyy))))
    return (lhs - rhs) / np.maximum(1.0, scale)


@dataclass(frozen=True, eq=False)
class SystPdeResult:
    residuals: np.ndarray
    endpoint_holomorphic: float
    endpoint_antiholomorphic: float

    @property
    def max_residual(self):
        return float(np.max(self.residuals))


def systpde_check(lam_eval, coeffs, phi, y, n: int = 3, h: float = 1e-3) -> SystPdeResult:
    """Residuals of the coefficient recurrences for k = 0..n+1 in the chart w = phi + i y.

    Row k is theta d(b_{k-1})/dw + (n-k+1) b_{k-1} dtheta/dw + theta d(b_k)/dw-bar
    + k b_k dtheta/dw-bar with b_{-1} = b_{n+1} = 0; each row's sup is divided
    by the sup of |theta| over the grid.
    """
    if len(coeffs) != n + 1:
        raise ValueError(f"need {n + 1} coefficients")
    phi, y = np.broadcast_arrays(np.asarray(phi, dtype=float), np.asarray(y, dtype=float))
    st, w1, _ = _fd_stencil(h)

    def d_w(fn):
        dphi = sum(w * fn(phi + d, y) for w, d in zip(w1, st) if w != 0.0)
        dy = sum(w * fn(phi, y + d) for w, d in zip(w1, st) if w != 0.0)
        return 0.5 * (dphi - 1j * dy), 0.5 * (dphi + 1j * dy)

    theta = lam_eval(phi, y)
    th_w, th_wb = d_w(lam_eval)
    vals = [np.asarray(b(phi, y), dtype=complex) * np.ones_like(phi) for b in coeffs]
    ders = [d_w(b) for b in coeffs]
    zero = np.zeros_like(phi, dtype=complex)
    rows = []
    for k in range(n + 2):
        prev = vals[k - 1] if k >= 1 else zero
        prev_w = ders[k - 1][0] if k >= 1 else zero
        cur = vals[k] if k <= n else zero
        cur_wb = ders[k][1] if k <= n else zero
        r = theta * prev_w + (n - k + 1) * prev * th_w + theta * cur_wb + k * cur * th_wb
        rows.append(float(np.max(np.abs(r))))
    scale = max(float(np.max(np.abs(theta))), 1e-300)
    res = np.array(rows) / scale
    return SystPdeResult(res, float(res[0]), float(res[-1]))


def cubic_coefficient_functions(spec, perturb: complex = 0.0):
    """(1, a1 + perturb, conj(a1 + perturb), 1) as callables of (phi, y)."""
    src = _source(spec)

    def b1(phi, y):
        return a1_eval(src, phi, y) + perturb

    def b2(phi, y):
        return np.conj(b1(phi, y))

    def one(phi, y):
        return np.ones_like(np.asarray(phi, dtype=float), dtype=complex)

    return [one, b1, b2, one]


# ---------------------------------------------------------------------------
# behaviour near the poles

@dataclass(frozen=True)
class PolarBoundReport:
    chart: str
    sup_b1: float
    shell_max: tuple
    metric_bounded: bool
    bounded: bool

    @property
    def divergent(self):
        return not (self.bounded and self.metric_bounded)

    def as_dict(self):
        d = dict(self.__dict__)
        d["shell_max"] = list(self.shell_max)
        d["divergent"] = self.divergent
        return d


def polar_integral_bound(spec, n_rays: int = 12, r_min: float = 1e-5, n_r: int = 200):
    """|a1| r^3 = |b1| on rays towards both poles, with lambda / r^2 along the same rays."""
    met = _source(spec)
    phi = np.linspace(0.0, 2.0 * np.pi, n_rays, endpoint=False)
    r = np.geomspace(1.0, r_min, n_r)
    reports = []
    for chart in (Chart.R, Chart.R_TILDE):
        y = np.log(r) if chart is Chart.R else -np.log(r)
        if getattr(met.profile, "is_stationary", False):
            y0 = met.profile.y0
            if (chart is Chart.R and y0 <= 0) or (chart is Chart.R_TILDE and y0 >= 0):
                y = np.sort(np.append(y, y0))
        rr = np.exp(y) if chart is Chart.R else np.exp(-y)
        P, Y = np.meshgrid(phi, y, indexing="ij")
        R = np.broadcast_to(rr, P.shape)
        with np.errstate(all="ignore"):
            fpp, fyy, fpy = met.f_second(P, Y)
            lam = met.lam(P, Y)
            b1 = np.abs((-3.0 * (fpp - fyy) + 6j * fpy) / lam) * R ** 3
            metric = lam / R ** 2
        metric_ok = bool(np.all(np.isfinite(metric)) and np.all(metric > 0))
        b1_ok = bool(np.all(np.isfinite(b1)))
        decades = np.floor(-np.log10(rr) + 1e-12)
        shells = tuple(float(np.max(b1[:, decades == d])) for d in np.unique(decades))
        sup = float(np.max(b1)) if b1_ok else math.inf
        bounded = b1_ok and shells[-1] <= 2.0 * max(shells) and math.isfinite(sup)
        reports.append(PolarBoundReport(chart.value, sup, shells, metric_ok, bool(bounded)))
    return reports


__all__ = [
    "CotangentState", "FlowMode", "TrigControlMetric", "a1_from_second", "a1_eval",
    "a1_finite_difference", "cubic_form", "cubic_form_complex", "cubic_integral_eval",
    "CubicCoefficients", "cubic_coefficients", "bracket_residual", "FlowResult", "integrate_flow",
    "conservation_drift", "random_states", "DriftSummary", "drift_survey", "eqpde_residual",
    "SystPdeResult", "systpde_check", "cubic_coefficient_functions", "PolarBoundReport",
    "polar_integral_bound",
]
