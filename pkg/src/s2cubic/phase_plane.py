"""Reduced planar dynamics of the logarithmic derivative q = x'/x.

With p = q' the third-order equation becomes a planar system.  Two forms
are provided: the regularised polynomial field (time rescaled by q) and the
original one that divides by q.  For large q the separatrices are continued
in the chart u = 1/q, h = (p + q^2)/q, where the field is regular at u = 0
and h(0) is exactly the limit that defines tau for an orbit.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import brentq

from . import kernels
from .errors import ManifoldEscape, PoorConvergence, SingularQ, StepSizeUnderflow

EPS_DEN = 1e-10
DEFAULT_DELTA = 1e-7
Q_SWITCH = 1.5


@dataclass(frozen=True)
class PhasePoint:
    q: float
    p: float

    def __post_init__(self):
        if not (math.isfinite(self.q) and math.isfinite(self.p)):
            raise ValueError(f"non-finite phase point {self}")


def _qp(pt):
    if isinstance(pt, PhasePoint):
        return pt.q, pt.p
    q, p = pt
    return np.asarray(q, dtype=float), np.asarray(p, dtype=float)


def sms_rhs(pt):
    """Regularised field (q p, 1 + 2q^2 - 3q^4 + p - 7q^2 p - 2p^2); vectorised."""
    q, p = _qp(pt)
    q2 = q * q
    return q * p, 1.0 + 2.0 * q2 - 3.0 * q2 * q2 + p - 7.0 * q2 * p - 2.0 * p * p


def syst1_rhs(pt, eps_den=EPS_DEN):
    """Original field (p, N(q, p)/q); raises SingularQ for |q| <= eps_den."""
    q, p = _qp(pt)
    if np.any(np.abs(q) <= eps_den):
        raise SingularQ(f"|q| <= {eps_den:g}")
    _, n = sms_rhs((q, p))
    return p, n / q


def sms_jacobian(q, p):
    return np.array([[p, q],
                     [4.0 * q - 12.0 * q ** 3 - 14.0 * q * p, 1.0 - 7.0 * q * q - 4.0 * p]])


class FixedPointKind(str, Enum):
    SADDLE = "saddle"
    NODE = "node"


@dataclass(frozen=True)
class FixedPointInfo:
    location: PhasePoint
    kind: FixedPointKind
    eigenvalues: tuple
    eigenvectors: tuple

    def as_dict(self):
        return {"q": self.location.q, "p": self.location.p, "kind": self.kind.value,
                "eigenvalues": list(self.eigenvalues),
                "eigenvectors": [list(v) for v in self.eigenvectors]}


def _newton_polish(q, p, steps=3):
    for _ in range(steps):
        f = np.array(sms_rhs((q, p)), dtype=float)
        if not np.any(f):
            break
        dq, dp = np.linalg.solve(sms_jacobian(q, p), -f)
        q, p = q + dq, p + dp
    return float(q), float(p)


def _unit(v):
    v = np.real_if_close(np.asarray(v, dtype=complex)).astype(float)
    v = v / np.linalg.norm(v)
    nz = np.flatnonzero(np.abs(v) > 1e-14)
    if nz.size and v[nz[0]] < 0:
        v = -v
    return v + 0.0


def classify_fixed_points():
    """The four equilibria of the regularised field with their linearisation.

    q p = 0 forces q = 0 or p = 0; each slice reduces to a polynomial in one
    variable whose real roots are isolated with numpy and polished by Newton.
    """
    points = []
    for root in np.roots([-2.0, 1.0, 1.0]):            # q = 0: 1 + p - 2 p^2
        if abs(root.imag) < 1e-12:
            points.append((0.0, root.real))
    for root in np.roots([-3.0, 0.0, 2.0, 0.0, 1.0]):  # p = 0: 1 + 2q^2 - 3q^4
        if abs(root.imag) < 1e-12:
            points.append((root.real, 0.0))
    out = []
    for q, p in sorted(points, key=lambda qp: (qp[0], -qp[1])):
        q, p = _newton_polish(q, p)
        vals, vecs = np.linalg.eig(sms_jacobian(q, p))
        vals = np.real_if_close(vals).astype(float)
        order = np.argsort(vals)[::-1]
        vals = vals[order]
        vecs = [tuple(_unit(vecs[:, i])) for i in order]
        kind = FixedPointKind.SADDLE if vals[0] * vals[1] < 0 else FixedPointKind.NODE
        out.append(FixedPointInfo(PhasePoint(q + 0.0, p + 0.0), kind,
                                  tuple(float(v) for v in vals), tuple(vecs)))
    return out


def find_fixed_point(q, p, points=None):
    points = points if points is not None else classify_fixed_points()
    return min(points, key=lambda fp: math.hypot(fp.location.q - q, fp.location.p - p))


class Branch(str, Enum):
    UNSTABLE_POS = "unstable_pos"
    UNSTABLE_NEG = "unstable_neg"
    STABLE_POS = "stable_pos"
    STABLE_NEG = "stable_neg"

    @property
    def unstable(self):
        return self.value.startswith("unstable")

    @property
    def sign(self):
        return 1.0 if self.value.endswith("pos") else -1.0


@dataclass(frozen=True, eq=False)
class _PlanarPiece:
    ts: np.ndarray
    ys: np.ndarray
    coeffs: np.ndarray


@dataclass(frozen=True, eq=False)
class SeparatrixCurve:
    """Traced invariant curve; ``q`` and ``p`` are ordered along the orbit.

    ``h_limit`` is (p + q^2)/q continued to q = infinity when the curve was
    followed that far; ``delta_change`` is the largest relative change of
    p(q) when the seeding offset is halved.
    """

    q: np.ndarray
    p: np.ndarray
    terminal: str
    h_limit: float | None = None
    delta_change: float | None = None
    _sms: _PlanarPiece | None = field(default=None, repr=False)
    _hchart: _PlanarPiece | None = field(default=None, repr=False)

    def __len__(self):
        return self.q.size

    def __iter__(self):
        return (PhasePoint(float(a), float(b)) for a, b in zip(self.q, self.p))

    @property
    def points(self):
        return list(self)

    @property
    def q_range(self):
        return float(self.q.min()), float(self.q.max())

    def p_at(self, q_query):
        """p on the curve at the given q values (curve must be monotone in q)."""
        q_query = np.atleast_1d(np.asarray(q_query, dtype=float))
        out = np.empty_like(q_query)
        for i, qq in enumerate(q_query):
            out[i] = self._p_single(qq)
        return out

    def _p_single(self, qq):
        hc = self._hchart
        if hc is not None and qq > 0:
            u = 1.0 / qq
            lo, hi = sorted((float(hc.ts[0]), float(hc.ts[-1])))
            if lo <= u <= hi:
                v, _ = kernels.dense_eval(hc.ts, hc.ys, hc.coeffs, [u])
                return float(v[0, 0] * qq - qq * qq)
        sm = self._sms
        if sm is None:
            return float(np.interp(qq, self.q, self.p))
        qs = sm.ys[:, 0]
        idx = np.flatnonzero((qs[:-1] - qq) * (qs[1:] - qq) <= 0)
        if idx.size == 0:
            raise ValueError(f"q = {qq} outside traced range")
        k = int(idx[0])
        a, b = float(sm.ts[k]), float(sm.ts[k + 1])

        def f(t):
            v, _ = kernels.dense_eval(sm.ts, sm.ys, sm.coeffs, [t])
            return v[0, 0] - qq

        fa, fb = f(a), f(b)
        if fa == 0.0:
            t = a
        elif fb == 0.0:
            t = b
        else:
            t = brentq(f, a, b, xtol=1e-15, rtol=1e-15)
        v, _ = kernels.dense_eval(sm.ts, sm.ys, sm.coeffs, [t])
        return float(v[0, 1])


def _trace_once(loc, vec, sign, unstable, q_max, delta, q_switch, horizon):
    q0 = loc.q + sign * delta * vec[0]
    p0 = loc.p + sign * delta * vec[1]
    if q0 <= 0.0:
        raise ManifoldEscape("requested branch does not enter q > 0")
    direction = 1.0 if unstable else -1.0
    q_stop = min(q_max, q_switch)
    conv = (1e-9, 1.0, 0.0)
    params = [q_stop, conv[0], conv[1], conv[2], 1.0]
    ts, ys, F, status, ev = kernels.integrate(kernels.SYS_SMS, 0.0, direction * horizon,
                                              [q0, p0], params, rtol=1e-13, atol=1e-15)
    if status not in (kernels.ST_DONE, kernels.ST_EVENT):
        raise StepSizeUnderflow("planar integration failed", t_last=float(ts[-1]))
    if status == kernels.ST_EVENT and ev == 2:
        raise ManifoldEscape(f"trace crossed q = 0 near p = {ys[-1, 1]:.6g}")
    terminal = {0: "q_max", 1: "box", 3: "node"}.get(ev, "horizon") if status == kernels.ST_EVENT else "horizon"
    sms_piece = _PlanarPiece(ts, ys, F)
    q = ys[:, 0].copy()
    p = ys[:, 1].copy()
    h_piece = None
    h_limit = None
    if terminal == "q_max":
        # pin the last node exactly on q = q_stop
        def f(t):
            v, _ = kernels.dense_eval(ts, ys, F, [t])
            return v[0, 0] - q_stop
        t_hit = brentq(f, float(ts[-2]), float(ts[-1]), xtol=1e-15, rtol=1e-15)
        v, _ = kernels.dense_eval(ts, ys, F, [t_hit])
        q[-1], p[-1] = q_stop, v[0, 1]
        if q_max > q_switch:
            u0 = 1.0 / q_stop
            h0 = (p[-1] + q_stop * q_stop) / q_stop
            us, hs, HF, hst, _ = kernels.integrate(kernels.SYS_HODE, u0, 0.0, [h0], [EPS_DEN],
                                                   rtol=1e-13, atol=1e-15)
            if hst != kernels.ST_DONE:
                raise StepSizeUnderflow("h-chart integration failed", t_last=float(us[-1]))
            h_piece = _PlanarPiece(us, hs, HF)
            h_limit = float(hs[-1, 0])
            u_keep = us[1:] >= 1.0 / q_max
            qh = 1.0 / us[1:][u_keep]
            ph = hs[1:, 0][u_keep] * qh - qh * qh
            q_end = q_max
            v, _ = kernels.dense_eval(us, hs, HF, [1.0 / q_end])
            q = np.concatenate([q, qh, [q_end]])
            p = np.concatenate([p, ph, [v[0, 0] * q_end - q_end * q_end]])
            if q[-1] == q[-2]:
                q, p = q[:-1], p[:-1]
    return SeparatrixCurve(q, p, terminal, h_limit, None, sms_piece, h_piece)


def trace_separatrix(saddle: FixedPointInfo, branch, q_max: float = 50.0, delta: float = DEFAULT_DELTA,
                     q_switch: float = Q_SWITCH, horizon: float = 200.0, check_delta: bool = True):
    """Follow one branch of a saddle's invariant manifold into q > 0.

    The seed is the saddle plus ``delta`` times the analytic eigenvector; the
    unstable branch runs forward in time and the stable one backward.  Beyond
    ``q_switch`` the curve is continued in the (u, h) chart up to ``q_max``.
    """
    branch = Branch(branch)
    if saddle.kind is not FixedPointKind.SADDLE:
        raise ValueError("trace_separatrix needs a saddle")
    if not q_max > 1.0:
        raise ValueError("q_max must exceed 1")
    lam = np.asarray(saddle.eigenvalues)
    idx = int(np.argmax(lam)) if branch.unstable else int(np.argmin(lam))
    vec = np.asarray(saddle.eigenvectors[idx])
    args = (saddle.location, vec, branch.sign, branch.unstable, q_max)
    curve = _trace_once(*args, delta, q_switch, horizon)
    if not check_delta:
        return curve
    half = _trace_once(*args, delta / 2.0, q_switch, horizon)
    lo = max(curve.q_range[0], half.q_range[0])
    hi = min(curve.q_range[1], half.q_range[1])
    change = 0.0
    if hi > lo:
        qs = np.linspace(lo, hi, 25)[1:-1]
        a = curve.p_at(qs)
        b = half.p_at(qs)
        change = float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(a))))
    return SeparatrixCurve(curve.q, curve.p, curve.terminal, curve.h_limit, change,
                           curve._sms, curve._hchart)


@dataclass(frozen=True)
class LimitEstimate:
    value: float
    residual: float
    n_samples: int
    coefficients: tuple
    chart_limit: float | None = None

    @property
    def error(self):
        est = self.residual
        if self.chart_limit is not None:
            est = max(est, abs(self.value - self.chart_limit))
        return est


def extrapolate_inverse_q(q, values, window=None, tol=1e-6):
    """Fit values = L + c1/q + c2/q^2 over ``window`` and return L."""
    q = np.asarray(q, dtype=float)
    values = np.asarray(values, dtype=float)
    if window is None:
        hi = float(np.max(q))
        window = (hi / 2.0, hi)
    sel = (q >= window[0]) & (q <= window[1])
    if np.count_nonzero(sel) < 4:
        raise PoorConvergence(f"only {np.count_nonzero(sel)} samples in window {window}")
    qs, vs = q[sel], values[sel]
    A = np.column_stack([np.ones_like(qs), 1.0 / qs, 1.0 / qs ** 2])
    coef, *_ = np.linalg.lstsq(A, vs, rcond=None)
    resid = float(np.max(np.abs(A @ coef - vs)))
    if resid > tol:
        raise PoorConvergence(f"fit residual {resid:.3e} exceeds {tol:.1e}")
    return LimitEstimate(float(coef[0]), resid, int(qs.size), tuple(float(c) for c in coef))


def _curve_qp(curve):
    if isinstance(curve, SeparatrixCurve):
        return curve.q, curve.p
    arr = np.asarray(curve, dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 3:
        return arr[:, 1], arr[:, 2]
    if arr.ndim == 2 and arr.shape[1] == 2:
        return arr[:, 0], arr[:, 1]
    q, p = curve
    return np.asarray(q, dtype=float), np.asarray(p, dtype=float)


def saddle_minus_half():
    return find_fixed_point(0.0, -0.5)


def estimate_T_from_separatrix(q_max: float = 200.0, fit_window=None, tol: float = 1e-6,
                               curve=None, n_samples: int = 41):
    """Limit of -(p + q^2)/q along the stable separatrix of (0, -1/2).

    ``curve`` overrides the traced separatrix (any object accepted by
    ``tau_from_orbit``); the fit uses ``n_samples`` points of the window when
    the curve supports interpolation and its raw samples otherwise.
    """
    if q_max < 20.0:
        raise PoorConvergence(f"q_max = {q_max} is below the minimum of 20")
    window = fit_window if fit_window is not None else (q_max / 2.0, q_max)
    chart = None
    if curve is None:
        curve = trace_separatrix(saddle_minus_half(), Branch.STABLE_POS, q_max=q_max)
    if isinstance(curve, SeparatrixCurve):
        qs = np.linspace(window[0], window[1], n_samples)
        ps = curve.p_at(qs)
        if curve.h_limit is not None:
            chart = -curve.h_limit
    else:
        qs, ps = _curve_qp(curve)
    est = extrapolate_inverse_q(qs, -(ps + qs * qs) / qs, window, tol)
    return LimitEstimate(est.value, est.residual, est.n_samples, est.coefficients, chart)


def tau_from_orbit(curve, window=None, tol: float = 1e-6):
    """Limit of (q^2 + p)/q as q grows, for a curve or an array of (t, q, p) / (q, p) rows."""
    chart = None
    if isinstance(curve, SeparatrixCurve):
        hi = curve.q_range[1]
        window = window if window is not None else (hi / 2.0, hi)
        q = np.linspace(window[0], window[1], 41)
        p = curve.p_at(q)
        chart = curve.h_limit
    else:
        q, p = _curve_qp(curve)
    est = extrapolate_inverse_q(q, (q * q + p) / q, window, tol)
    return LimitEstimate(est.value, est.residual, est.n_samples, est.coefficients, chart)


def tau_orbit(tau: float, q_min: float = 2.0, q_max: float = 1e3):
    """Orbit of the solution with parameter tau, from q = infinity down to ``q_min``.

    Integrated in the (u, h) chart starting at u = 0 with h = tau.
    """
    us, hs, HF, st, _ = kernels.integrate(kernels.SYS_HODE, 0.0, 1.0 / q_min, [tau], [EPS_DEN],
                                          rtol=1e-13, atol=1e-15)
    if st != kernels.ST_DONE:
        raise StepSizeUnderflow("h-chart integration failed", t_last=float(us[-1]))
    keep = us > 1.0 / q_max
    u = np.concatenate([[1.0 / q_max], us[keep]])
    h, _ = kernels.dense_eval(us, hs, HF, u)
    q = (1.0 / u)[::-1]
    p = (h[:, 0] * (1.0 / u) - (1.0 / u) ** 2)[::-1]
    return SeparatrixCurve(q, p, "q_min", tau, None, None, _PlanarPiece(us, hs, HF))


def write_curve_csv(curve, path):
    q, p = _curve_qp(curve)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["q", "p"])
        for a, b in zip(q, p):
            w.writerow([repr(float(a)), repr(float(b))])


def fixed_points_report(points=None) -> dict:
    points = points if points is not None else classify_fixed_points()
    return {"fixed_points": [fp.as_dict() for fp in points]}


def write_fixed_points_json(path, points=None):
    with open(path, "w") as fh:
        json.dump(fixed_points_report(points), fh, indent=2, sort_keys=True)
        fh.write("\n")
