"""Pure-Python fallback for the compiled integration kernels.

The public surface mirrors ``_ckernels.pyx`` exactly: the same built-in
systems, the same event conventions and the same step-size controller, so
either backend can be swapped in at import time.
"""

from __future__ import annotations

import math

import numpy as np

from . import _tableau as tb

SYS_JET = 0
SYS_SMS = 1
SYS_GODE = 2
SYS_HODE = 3

DIMS = {SYS_JET: 3, SYS_SMS: 2, SYS_GODE: 3, SYS_HODE: 1}
N_EVENTS = {SYS_JET: 3, SYS_SMS: 4, SYS_GODE: 2, SYS_HODE: 1}

ST_DONE = 0
ST_EVENT = 1
ST_UNDERFLOW = 2
ST_SINGULAR = 3
ST_MAXSTEPS = 4

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
ERR_EXP = -1.0 / 8.0

_NS = tb.N_STAGES
_NSE = tb.N_STAGES_EXTENDED
_A = tb.A.tolist()
_B = tb.B.tolist()
_C = tb.C.tolist()
_E3 = tb.E3.tolist()
_E5 = tb.E5.tolist()
_D = tb.D.tolist()


class _Singular(Exception):
    pass


def rhs(system, t, y, params):
    """Vector field of a built-in system; raises ``_Singular`` at a guarded pole.

    Parameter vectors: jet [eps_den, blowup, zero_tol, conv_radius, conv_q,
    zero_dt]; planar [q_max, conv_radius, conv_q, conv_p, box_on]; g-equation
    [eps_den, blowup, zero_tol]; h-chart [eps_den].
    """
    if system == SYS_JET:
        x, x1, x2 = y
        if abs(x1) <= params[0]:
            raise _Singular
        return [x1, x2, (x * x2 - 2.0 * x2 * x2 + x1 * x1 + x * x) / x1]
    if system == SYS_SMS:
        q, p = y
        q2 = q * q
        return [q * p, 1.0 + 2.0 * q2 - 3.0 * q2 * q2 + p - 7.0 * q2 * p - 2.0 * p * p]
    if system == SYS_GODE:
        g, g1, g2 = y
        den = g - 2.0 * t * g1
        if abs(den) <= params[0]:
            raise _Singular
        return [g1, g2, (3.0 * g2 * g1 + 4.0 * t * g2 * g2) / den]
    if system == SYS_HODE:
        h = y[0]
        den = 1.0 - t * h
        if abs(den) <= params[0]:
            raise _Singular
        return [(1.0 - 3.0 * h * h + h * t + t * t) / den]
    raise ValueError(f"unknown system id {system}")


def events(system, t, y, params):
    """Event functions; integration stops when one drops to <= 0.

    The blowup test on the jet system is applied to e^{-|t|}·max(|x|, |x2|) so
    the exponential growth of global solutions is not mistaken for escape.
    """
    if system == SYS_JET:
        x, x1, x2 = y
        e0 = x1 - params[2] * abs(x) - params[5] * abs(x2)
        e1 = params[1] - max(abs(x), abs(x2)) * math.exp(-abs(t))
        e2 = 1.0
        if params[3] > 0.0 and x != 0.0:
            q = x1 / x
            p = x2 / x - q * q
            e2 = math.hypot(q - params[4], p) - params[3]
        return [e0, e1, e2]
    if system == SYS_SMS:
        q, p = y
        e0 = params[0] - q
        e1 = 10.0 * q + 10.0 - abs(p + q * q) if params[4] > 0.0 else 1.0
        e2 = q
        e3 = 1.0
        if params[1] > 0.0:
            e3 = math.hypot(q - params[2], p - params[3]) - params[1]
        return [e0, e1, e2, e3]
    if system == SYS_GODE:
        g, g1, g2 = y
        e0 = (g - 2.0 * t * g1) - params[2]
        e1 = params[1] - max(abs(g), abs(g1), abs(g2))
        return [e0, e1]
    return [1.0]


def _rms(v):
    return math.sqrt(sum(a * a for a in v) / len(v))


def _initial_step(system, t0, y0, f0, t1, params, rtol, atol):
    n = len(y0)
    scale = [atol + abs(a) * rtol for a in y0]
    d0 = _rms([a / s for a, s in zip(y0, scale)])
    d1 = _rms([a / s for a, s in zip(f0, scale)])
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    span = abs(t1 - t0)
    h0 = min(h0, span)
    direction = 1.0 if t1 >= t0 else -1.0
    y1 = [a + h0 * direction * b for a, b in zip(y0, f0)]
    try:
        f1 = rhs(system, t0 + h0 * direction, y1, params)
    except _Singular:
        return h0
    d2 = _rms([(a - b) / s for a, b, s in zip(f1, f0, scale)]) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 8.0)
    return min(100.0 * h0, h1, span)


def integrate(system, t0, t1, y0, params, rtol=1e-12, atol=1e-14,
              max_step=math.inf, first_step=0.0, max_nodes=200000):
    """Adaptive DOP853 integration of a built-in system from ``t0`` towards ``t1``.

    Returns ``(ts, ys, coeffs, status, event)`` where ``coeffs[k]`` holds the
    seven dense-output polynomial coefficients of interval ``k``.
    """
    n = DIMS[system]
    params = [float(v) for v in params] + [0.0] * 8
    y = [float(v) for v in y0]
    t = float(t0)
    t1 = float(t1)
    direction = 1.0 if t1 >= t else -1.0

    ts = [t]
    ys = [list(y)]
    coeffs = []

    ev_old = events(system, t, y, params)
    for k, e in enumerate(ev_old):
        if e <= 0.0:
            return _pack(ts, ys, coeffs, n, ST_EVENT, k)
    try:
        f = rhs(system, t, y, params)
    except _Singular:
        return _pack(ts, ys, coeffs, n, ST_SINGULAR, -1)

    h_abs = first_step if first_step > 0.0 else _initial_step(
        system, t, y, f, t1, params, rtol, atol)
    K = [[0.0] * n for _ in range(_NSE)]

    while direction * (t1 - t) > 0.0:
        if len(ts) >= max_nodes:
            return _pack(ts, ys, coeffs, n, ST_MAXSTEPS, -1)
        min_step = 10.0 * abs(math.nextafter(t, direction * math.inf) - t)
        h_abs = min(h_abs, max_step)
        h_abs = max(h_abs, min_step)
        rejected = False
        while True:
            if h_abs < min_step:
                return _pack(ts, ys, coeffs, n, ST_UNDERFLOW, -1)
            h = h_abs * direction
            t_new = t + h
            if direction * (t_new - t1) > 0.0:
                t_new = t1
            h = t_new - t
            h_abs = abs(h)
            try:
                y_new, f_new = _step(system, t, y, f, h, K, n, params)
            except _Singular:
                h_abs *= MIN_FACTOR
                rejected = True
                if h_abs < min_step:
                    return _pack(ts, ys, coeffs, n, ST_SINGULAR, -1)
                continue
            err5 = [0.0] * n
            err3 = [0.0] * n
            for i in range(n):
                sc = atol + max(abs(y[i]), abs(y_new[i])) * rtol
                a5 = 0.0
                a3 = 0.0
                for s in range(_NS + 1):
                    a5 += K[s][i] * _E5[s]
                    a3 += K[s][i] * _E3[s]
                err5[i] = a5 / sc
                err3[i] = a3 / sc
            e5 = sum(v * v for v in err5)
            e3 = sum(v * v for v in err3)
            if e5 == 0.0 and e3 == 0.0:
                err = 0.0
            else:
                err = h_abs * e5 / math.sqrt((e5 + 0.01 * e3) * n)
            if err < 1.0:
                factor = MAX_FACTOR if err == 0.0 else min(MAX_FACTOR, SAFETY * err ** ERR_EXP)
                if rejected:
                    factor = min(1.0, factor)
                h_next = h_abs * factor
                break
            h_abs *= max(MIN_FACTOR, SAFETY * err ** ERR_EXP)
            rejected = True

        try:
            F = _dense(system, t, y, f, y_new, f_new, h, K, n, params)
        except _Singular:
            return _pack(ts, ys, coeffs, n, ST_SINGULAR, -1)
        coeffs.append(F)
        t, y, f = t_new, y_new, f_new
        ts.append(t)
        ys.append(list(y))
        h_abs = h_next
        ev = events(system, t, y, params)
        for k, e in enumerate(ev):
            if e <= 0.0:
                return _pack(ts, ys, coeffs, n, ST_EVENT, k)
    return _pack(ts, ys, coeffs, n, ST_DONE, -1)


def _step(system, t, y, f, h, K, n, params):
    K[0][:] = f
    for s in range(1, _NS):
        a = _A[s]
        yy = [0.0] * n
        for i in range(n):
            acc = 0.0
            for j in range(s):
                acc += K[j][i] * a[j]
            yy[i] = y[i] + h * acc
        K[s][:] = rhs(system, t + _C[s] * h, yy, params)
    y_new = [0.0] * n
    for i in range(n):
        acc = 0.0
        for j in range(_NS):
            acc += K[j][i] * _B[j]
        y_new[i] = y[i] + h * acc
    f_new = rhs(system, t + h, y_new, params)
    K[_NS][:] = f_new
    return y_new, f_new


def _dense(system, t, y, f, y_new, f_new, h, K, n, params):
    for s in range(_NS + 1, _NSE):
        a = _A[s]
        yy = [0.0] * n
        for i in range(n):
            acc = 0.0
            for j in range(s):
                acc += K[j][i] * a[j]
            yy[i] = y[i] + h * acc
        K[s][:] = rhs(system, t + _C[s] * h, yy, params)
    F = [[0.0] * n for _ in range(tb.INTERPOLATOR_POWER)]
    for i in range(n):
        dy = y_new[i] - y[i]
        F[0][i] = dy
        F[1][i] = h * f[i] - dy
        F[2][i] = 2.0 * dy - h * (f_new[i] + f[i])
        for r in range(4):
            acc = 0.0
            d = _D[r]
            for j in range(_NSE):
                acc += d[j] * K[j][i]
            F[3 + r][i] = h * acc
    return F


def _pack(ts, ys, coeffs, n, status, event):
    F = np.asarray(coeffs, dtype=float).reshape(len(coeffs), tb.INTERPOLATOR_POWER, n)
    return (np.asarray(ts, dtype=float), np.asarray(ys, dtype=float).reshape(len(ys), n),
            F, status, event)


def dense_eval(seg_t, seg_y, coeffs, t_query, out_value, out_deriv):
    """Evaluate the piecewise dense output (value and d/dt) at sorted or unsorted times.

    ``seg_t`` holds the node times (monotone in either direction); query times
    outside the covered range are clamped to the nearest interval.
    """
    n_int = coeffs.shape[0]
    increasing = seg_t[-1] >= seg_t[0]
    key = seg_t if increasing else seg_t[::-1]
    for m in range(t_query.shape[0]):
        tq = t_query[m]
        idx = int(np.searchsorted(key, tq, side="right")) - 1
        idx = min(max(idx, 0), n_int - 1)
        if not increasing:
            idx = n_int - 1 - idx
        t_old = seg_t[idx]
        h = seg_t[idx + 1] - t_old
        x = (tq - t_old) / h
        F = coeffs[idx]
        val = np.zeros(F.shape[1])
        der = np.zeros(F.shape[1])
        for i in range(F.shape[0] - 1, -1, -1):
            val = val + F[i]
            if (F.shape[0] - 1 - i) % 2 == 0:
                der = der * x + val
                val = val * x
            else:
                der = der * (1.0 - x) - val
                val = val * (1.0 - x)
        out_value[m] = seg_y[idx] + val
        out_deriv[m] = der / h
