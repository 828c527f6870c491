"""Integration of x' x''' = x x'' - 2 x''^2 + x'^2 + x^2.

The initial value problem x(0) = 0, x'(0) = 1, x''(0) = tau is integrated
in both time directions with an 8th-order Dormand-Prince pair, keeping the
dense output so trajectories can be evaluated anywhere on their span.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.optimize import brentq

from . import kernels
from .errors import NonPositiveX, SingularDerivative, StepSizeUnderflow

EPS_DEN = 1e-10
BLOWUP = 1e12
ZERO_TOL = 1e-4
ZERO_DT = 1e-9
EVENT_XTOL = 1e-12


@dataclass(frozen=True)
class JetState:
    t: float
    x: float
    x1: float
    x2: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.t, self.x, self.x1, self.x2)):
            raise ValueError(f"non-finite jet {self}")

    def as_array(self):
        return np.array([self.x, self.x1, self.x2])


def third_derivative(x, x1, x2):
    """Vectorised x''' without any guard (callers handle x1 = 0)."""
    return (x * x2 - 2.0 * x2 * x2 + x1 * x1 + x * x) / x1


def rhs_third_order(s: JetState, eps_den: float = EPS_DEN) -> float:
    """x''' at the jet ``s``; raises SingularDerivative when |x'| <= eps_den."""
    if abs(s.x1) <= eps_den:
        raise SingularDerivative(f"|x'| = {abs(s.x1):.3e} <= {eps_den:.1e} at t = {s.t}")
    return third_derivative(s.x, s.x1, s.x2)


@dataclass(frozen=True)
class IvpSpec:
    tau: float
    t_span: tuple = (-5.0, 5.0)
    rel_tol: float = 1e-12
    abs_tol: float = 1e-14
    max_step: float = math.inf
    eps_den: float = EPS_DEN
    blowup: float = BLOWUP
    zero_tol: float = ZERO_TOL

    def __post_init__(self):
        lo, hi = (float(v) for v in self.t_span)
        object.__setattr__(self, "t_span", (lo, hi))
        if not (lo <= 0.0 <= hi):
            raise ValueError(f"t_span {self.t_span} must contain 0")
        if not (self.rel_tol > 0 and self.abs_tol > 0 and self.max_step > 0):
            raise ValueError("tolerances and max_step must be positive")
        if not math.isfinite(self.tau):
            raise ValueError("tau must be finite")

    def as_dict(self):
        return {"tau": self.tau, "t_span": list(self.t_span), "rel_tol": self.rel_tol,
                "abs_tol": self.abs_tol, "max_step": self.max_step if math.isfinite(self.max_step) else None,
                "eps_den": self.eps_den, "blowup": self.blowup, "zero_tol": self.zero_tol}


class TerminationKind(str, Enum):
    COMPLETED = "completed"
    DERIVATIVE_ZERO = "derivative_zero"
    BLOWUP = "blowup"


@dataclass(frozen=True)
class Termination:
    kind: TerminationKind
    t: float | None = None

    def as_dict(self):
        return {"kind": self.kind.value, "t": self.t}


@dataclass(frozen=True, eq=False)
class Segment:
    """One-directional piece of dense output starting at ``ts[0]``.

    ``t_end`` may stop short of ``ts[-1]`` when an event was located inside
    the last step; the polynomial of that step is still used up to ``t_end``.
    """

    ts: np.ndarray
    ys: np.ndarray
    coeffs: np.ndarray
    t_end: float
    sign: float = 1.0

    @property
    def t_start(self):
        return float(self.ts[0])

    def covers(self, t):
        lo, hi = sorted((self.t_start, self.t_end))
        return (t >= lo) & (t <= hi)

    def evaluate(self, t):
        val, der = kernels.dense_eval(self.ts, self.ys, self.coeffs, t)
        return self.sign * val, self.sign * der

    def node_arrays(self):
        """Node times and states, ending exactly at ``t_end``."""
        ts, ys = self.ts, self.ys
        if ts.size and ts[-1] != self.t_end:
            keep = (ts - self.t_end) * np.sign(self.t_end - ts[0] or 1.0) < 0
            end_state, _ = self.evaluate([self.t_end])
            return (np.append(ts[keep], self.t_end),
                    np.vstack([self.sign * ys[keep], end_state]))
        return ts, self.sign * ys


def _event_value(kind, t, y, zero_tol, blowup):
    if kind == 0:
        return y[1] - zero_tol * abs(y[0]) - ZERO_DT * abs(y[2])
    return blowup - max(abs(y[0]), abs(y[2])) * math.exp(-abs(t))


def _integrate_side(y0, t0, t1, rel_tol, abs_tol, max_step, eps_den, blowup, zero_tol,
                    conv=None):
    """Integrate one direction; returns (Segment, Termination, kernel event id)."""
    y0 = np.asarray(y0, dtype=float)
    sign = 1.0
    if y0[1] < 0.0:
        # x -> -x maps solutions to solutions; keep x' positive for the event test
        sign, y0 = -1.0, -y0
    conv_r, conv_q = conv if conv is not None else (0.0, 0.0)
    params = [eps_den, blowup, zero_tol, conv_r, conv_q, ZERO_DT]
    ts, ys, F, status, ev = kernels.integrate(kernels.SYS_JET, t0, t1, y0, params,
                                              rtol=rel_tol, atol=abs_tol, max_step=max_step)
    if status in (kernels.ST_UNDERFLOW, kernels.ST_SINGULAR, kernels.ST_MAXSTEPS):
        what = {kernels.ST_UNDERFLOW: "step size underflow",
                kernels.ST_SINGULAR: "singular right-hand side",
                kernels.ST_MAXSTEPS: "node limit reached"}[status]
        raise StepSizeUnderflow(f"{what} after t = {ts[-1]!r}", t_last=float(ts[-1]))
    t_end = float(ts[-1])
    term = Termination(TerminationKind.COMPLETED)
    if status == kernels.ST_EVENT and ev in (0, 1) and len(ts) > 1:
        def fn(t):
            v, _ = kernels.dense_eval(ts, ys, F, [t])
            return _event_value(ev, t, v[0], zero_tol, blowup)
        a, b = float(ts[-2]), float(ts[-1])
        t_end = a if fn(a) <= 0.0 else brentq(fn, a, b, xtol=EVENT_XTOL, rtol=4 * np.finfo(float).eps)
        kind = TerminationKind.DERIVATIVE_ZERO if ev == 0 else TerminationKind.BLOWUP
        term = Termination(kind, t_end)
    elif status == kernels.ST_EVENT and ev in (0, 1):
        kind = TerminationKind.DERIVATIVE_ZERO if ev == 0 else TerminationKind.BLOWUP
        term = Termination(kind, t_end)
    return Segment(ts, ys, F, t_end, sign), term, (ev if status == kernels.ST_EVENT else -1)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Solution curve built from a backward and a forward segment."""

    segments: tuple
    terminations: tuple
    spec: IvpSpec | None = None

    @property
    def termination(self) -> Termination:
        for term in self.terminations:
            if term.kind is not TerminationKind.COMPLETED:
                return term
        return Termination(TerminationKind.COMPLETED)

    @property
    def t_min(self):
        return min(min(s.t_start, s.t_end) for s in self.segments)

    @property
    def t_max(self):
        return max(max(s.t_start, s.t_end) for s in self.segments)

    def node_arrays(self):
        """(t, states) with strictly increasing times."""
        parts_t, parts_y = [], []
        for seg in self.segments:
            ts, ys = seg.node_arrays()
            if ts[-1] < ts[0]:
                ts, ys = ts[::-1], ys[::-1]
            parts_t.append(ts)
            parts_y.append(ys)
        t = np.concatenate(parts_t)
        y = np.vstack(parts_y)
        keep = np.concatenate([[True], np.diff(t) > 0])
        return t[keep], y[keep]

    @property
    def nodes(self):
        t, y = self.node_arrays()
        return [JetState(float(a), *map(float, b)) for a, b in zip(t, y)]

    def _dispatch(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t < self.t_min - 1e-14) or np.any(t > self.t_max + 1e-14):
            raise ValueError(f"query outside trajectory span [{self.t_min}, {self.t_max}]")
        val = np.empty((t.size, 3))
        der = np.empty((t.size, 3))
        done = np.zeros(t.size, dtype=bool)
        for seg in self.segments:
            mask = seg.covers(t) & ~done
            if mask.any():
                v, d = seg.evaluate(t[mask])
                val[mask], der[mask] = v, d
                done |= mask
        return val, der

    def __call__(self, t):
        """(x, x', x'') at the times ``t``; shape (n, 3)."""
        return self._dispatch(t)[0]

    def derivative(self, t):
        return self._dispatch(t)[1]

    def residual(self, t):
        """x' x''' - (x x'' - 2 x''^2 + x'^2 + x^2) with x''' from the interpolant."""
        val, der = self._dispatch(t)
        x, x1, x2 = val.T
        return x1 * der[:, 2] - (x * x2 - 2.0 * x2 * x2 + x1 * x1 + x * x)


def integrate_jet(jet: JetState, t_end: float, rel_tol=1e-12, abs_tol=1e-14,
                  max_step=math.inf, eps_den=EPS_DEN, blowup=BLOWUP, zero_tol=ZERO_TOL):
    """One-sided integration from an arbitrary jet."""
    seg, term, _ = _integrate_side(jet.as_array(), jet.t, t_end, rel_tol, abs_tol, max_step,
                                   eps_den, blowup, zero_tol)
    return Trajectory((seg,), (term,))


def integrate_ivp(spec: IvpSpec) -> Trajectory:
    """Integrate x(0)=0, x'(0)=1, x''(0)=tau over ``spec.t_span``."""
    y0 = [0.0, 1.0, spec.tau]
    segs, terms = [], []
    lo, hi = spec.t_span
    for t1 in (lo, hi):
        if t1 == 0.0:
            continue
        seg, term, _ = _integrate_side(y0, 0.0, t1, spec.rel_tol, spec.abs_tol, spec.max_step,
                                       spec.eps_den, spec.blowup, spec.zero_tol)
        segs.append(seg)
        terms.append(term)
    if not segs:
        ts = np.array([0.0])
        seg = Segment(ts, np.array([y0]), np.empty((0, 7, 3)), 0.0)
        segs, terms = [seg], [Termination(TerminationKind.COMPLETED)]
    return Trajectory(tuple(segs), tuple(terms), spec)


def log_reduction(traj: Trajectory, times=None):
    """Rows (t, q, p) with q = x'/x and p = x''/x - q^2.

    Uses the trajectory nodes unless sample ``times`` are given.
    """
    if times is None:
        t, y = traj.node_arrays()
    else:
        t = np.asarray(times, dtype=float)
        y = traj(t)
    x, x1, x2 = y.T
    bad = x <= 0.0
    if bad.any():
        raise NonPositiveX(f"x <= 0 at t = {t[bad][0]!r}")
    q = x1 / x
    p = x2 / x - q * q
    return np.column_stack([t, q, p])


def write_trajectory_csv(traj: Trajectory, path):
    t, y = traj.node_arrays()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "x1", "x2"])
        for ti, (x, x1, x2) in zip(t, y):
            w.writerow([repr(float(ti)), repr(float(x)), repr(float(x1)), repr(float(x2))])


def trajectory_manifest(traj: Trajectory) -> dict:
    t, _ = traj.node_arrays()
    return {
        "spec": traj.spec.as_dict() if traj.spec is not None else None,
        "termination": traj.termination.as_dict(),
        "sides": [term.as_dict() for term in traj.terminations],
        "n_nodes": int(t.size),
        "t_range": [float(t[0]), float(t[-1])],
        "backend": kernels.BACKEND,
    }


def write_manifest(traj: Trajectory, path):
    with open(path, "w") as fh:
        json.dump(trajectory_manifest(traj), fh, indent=2, sort_keys=True)
        fh.write("\n")
