# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled DOP853 kernels; behaviour is identical to ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, sqrt, pow, hypot, nextafter, INFINITY

from . import _tableau as tb

cnp.import_array()

DEF NS = 12
DEF NSE = 16
DEF NPOW = 7
DEF MAXD = 4

cdef int SYS_JET = 0
cdef int SYS_SMS = 1
cdef int SYS_GODE = 2
cdef int SYS_HODE = 3

cdef double SAFETY = 0.9
cdef double MIN_FACTOR = 0.2
cdef double MAX_FACTOR = 10.0
cdef double ERR_EXP = -1.0 / 8.0

cdef double _A[NSE][NSE]
cdef double _B[NS]
cdef double _C[NSE]
cdef double _E3[NS + 1]
cdef double _E5[NS + 1]
cdef double _D[4][NSE]


def _load_tableau():
    cdef int i, j
    for i in range(NSE):
        _C[i] = tb.C[i]
        for j in range(NSE):
            _A[i][j] = tb.A[i, j]
    for i in range(NS):
        _B[i] = tb.B[i]
    for i in range(NS + 1):
        _E3[i] = tb.E3[i]
        _E5[i] = tb.E5[i]
    for i in range(4):
        for j in range(NSE):
            _D[i][j] = tb.D[i, j]


_load_tableau()


cdef inline int _dim(int system):
    if system == SYS_JET or system == SYS_GODE:
        return 3
    if system == SYS_SMS:
        return 2
    return 1


cdef inline int _nev(int system):
    if system == SYS_JET:
        return 3
    if system == SYS_SMS:
        return 4
    if system == SYS_GODE:
        return 2
    return 1


cdef int _rhs(int system, double t, double* y, double* out, double* par) nogil:
    cdef double x, x1, x2, q, p, q2, g, g1, g2, den, h
    if system == SYS_JET:
        x = y[0]; x1 = y[1]; x2 = y[2]
        if fabs(x1) <= par[0]:
            return 1
        out[0] = x1
        out[1] = x2
        out[2] = (x * x2 - 2.0 * x2 * x2 + x1 * x1 + x * x) / x1
        return 0
    if system == SYS_SMS:
        q = y[0]; p = y[1]
        q2 = q * q
        out[0] = q * p
        out[1] = 1.0 + 2.0 * q2 - 3.0 * q2 * q2 + p - 7.0 * q2 * p - 2.0 * p * p
        return 0
    if system == SYS_GODE:
        g = y[0]; g1 = y[1]; g2 = y[2]
        den = g - 2.0 * t * g1
        if fabs(den) <= par[0]:
            return 1
        out[0] = g1
        out[1] = g2
        out[2] = (3.0 * g2 * g1 + 4.0 * t * g2 * g2) / den
        return 0
    h = y[0]
    den = 1.0 - t * h
    if fabs(den) <= par[0]:
        return 1
    out[0] = (1.0 - 3.0 * h * h + h * t + t * t) / den
    return 0


cdef int _events(int system, double t, double* y, double* par) nogil:
    """Index of the first event function that is <= 0, or -1."""
    cdef double x, x1, x2, q, p, e, m
    if system == SYS_JET:
        x = y[0]; x1 = y[1]; x2 = y[2]
        if x1 - par[2] * fabs(x) - par[5] * fabs(x2) <= 0.0:
            return 0
        m = fabs(x)
        if fabs(x2) > m:
            m = fabs(x2)
        if par[1] - m * exp(-fabs(t)) <= 0.0:
            return 1
        if par[3] > 0.0 and x != 0.0:
            q = x1 / x
            p = x2 / x - q * q
            if hypot(q - par[4], p) - par[3] <= 0.0:
                return 2
        return -1
    if system == SYS_SMS:
        q = y[0]; p = y[1]
        if par[0] - q <= 0.0:
            return 0
        if par[4] > 0.0 and 10.0 * q + 10.0 - fabs(p + q * q) <= 0.0:
            return 1
        if q <= 0.0:
            return 2
        if par[1] > 0.0 and hypot(q - par[2], p - par[3]) - par[1] <= 0.0:
            return 3
        return -1
    if system == SYS_GODE:
        if (y[0] - 2.0 * t * y[1]) - par[2] <= 0.0:
            return 0
        m = fabs(y[0])
        if fabs(y[1]) > m:
            m = fabs(y[1])
        if fabs(y[2]) > m:
            m = fabs(y[2])
        if par[1] - m <= 0.0:
            return 1
        return -1
    return -1


cdef double _rms(double* v, int n) nogil:
    cdef double acc = 0.0
    cdef int i
    for i in range(n):
        acc += v[i] * v[i]
    return sqrt(acc / n)


cdef double _initial_step(int system, double t0, double* y0, double* f0, double t1,
                          double* par, double rtol, double atol, int n) nogil:
    cdef double tmp[MAXD]
    cdef double y1[MAXD]
    cdef double f1[MAXD]
    cdef double d0, d1, d2, h0, h1, span, direction, sc
    cdef int i
    for i in range(n):
        sc = atol + fabs(y0[i]) * rtol
        tmp[i] = y0[i] / sc
    d0 = _rms(tmp, n)
    for i in range(n):
        sc = atol + fabs(y0[i]) * rtol
        tmp[i] = f0[i] / sc
    d1 = _rms(tmp, n)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    span = fabs(t1 - t0)
    if h0 > span:
        h0 = span
    direction = 1.0 if t1 >= t0 else -1.0
    for i in range(n):
        y1[i] = y0[i] + h0 * direction * f0[i]
    if _rhs(system, t0 + h0 * direction, y1, f1, par):
        return h0
    for i in range(n):
        sc = atol + fabs(y0[i]) * rtol
        tmp[i] = (f1[i] - f0[i]) / sc
    d2 = _rms(tmp, n) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = h0 * 1e-3
        if h1 < 1e-6:
            h1 = 1e-6
    else:
        h1 = pow(0.01 / (d1 if d1 > d2 else d2), 1.0 / 8.0)
    if h1 > 100.0 * h0:
        h1 = 100.0 * h0
    if h1 > span:
        h1 = span
    return h1


cdef int _step(int system, double t, double* y, double* f, double h,
               double K[NSE][MAXD], int n, double* par, double* y_new, double* f_new) nogil:
    cdef double yy[MAXD]
    cdef double acc
    cdef int s, i, j
    for i in range(n):
        K[0][i] = f[i]
    for s in range(1, NS):
        for i in range(n):
            acc = 0.0
            for j in range(s):
                acc += K[j][i] * _A[s][j]
            yy[i] = y[i] + h * acc
        if _rhs(system, t + _C[s] * h, yy, K[s], par):
            return 1
    for i in range(n):
        acc = 0.0
        for j in range(NS):
            acc += K[j][i] * _B[j]
        y_new[i] = y[i] + h * acc
    if _rhs(system, t + h, y_new, f_new, par):
        return 1
    for i in range(n):
        K[NS][i] = f_new[i]
    return 0


cdef int _dense(int system, double t, double* y, double* f, double* y_new, double* f_new,
                double h, double K[NSE][MAXD], int n, double* par, double* F) nogil:
    """Fill F (NPOW x n, row-major) with the continuous-extension coefficients."""
    cdef double yy[MAXD]
    cdef double acc, dy
    cdef int s, i, j, r
    for s in range(NS + 1, NSE):
        for i in range(n):
            acc = 0.0
            for j in range(s):
                acc += K[j][i] * _A[s][j]
            yy[i] = y[i] + h * acc
        if _rhs(system, t + _C[s] * h, yy, K[s], par):
            return 1
    for i in range(n):
        dy = y_new[i] - y[i]
        F[0 * n + i] = dy
        F[1 * n + i] = h * f[i] - dy
        F[2 * n + i] = 2.0 * dy - h * (f_new[i] + f[i])
        for r in range(4):
            acc = 0.0
            for j in range(NSE):
                acc += _D[r][j] * K[j][i]
            F[(3 + r) * n + i] = h * acc
    return 0


def integrate(int system, double t0, double t1, y0, params, double rtol=1e-12,
              double atol=1e-14, double max_step=INFINITY, double first_step=0.0,
              int max_nodes=200000):
    """Adaptive DOP853 integration of a built-in system (see ``_pykernels.integrate``)."""
    cdef int n = _dim(system)
    cdef double par[8]
    cdef double y[MAXD]
    cdef double f[MAXD]
    cdef double y_new[MAXD]
    cdef double f_new[MAXD]
    cdef double K[NSE][MAXD]
    cdef double Fbuf[NPOW * MAXD]
    cdef double t = t0, t_new, h, h_abs, h_next, min_step, direction, err, e5, e3, a5, a3, sc, factor
    cdef int i, s, k, status = 0, event = -1, count = 1, cap = 256, rejected
    cdef double[::1] ts
    cdef double[:, ::1] ys
    cdef double[:, :, ::1] Fs

    plist = [float(v) for v in params]
    for i in range(8):
        par[i] = plist[i] if i < len(plist) else 0.0
    for i in range(n):
        y[i] = float(y0[i])

    ts_arr = np.empty(cap)
    ys_arr = np.empty((cap, n))
    F_arr = np.empty((cap, NPOW, n))
    ts = ts_arr
    ys = ys_arr
    Fs = F_arr
    ts[0] = t
    for i in range(n):
        ys[0, i] = y[i]

    direction = 1.0 if t1 >= t0 else -1.0

    k = _events(system, t, y, par)
    if k >= 0:
        return _finish(ts_arr, ys_arr, F_arr, count, 1, k)
    if _rhs(system, t, y, f, par):
        return _finish(ts_arr, ys_arr, F_arr, count, 3, -1)

    if first_step > 0.0:
        h_abs = first_step
    else:
        h_abs = _initial_step(system, t, y, f, t1, par, rtol, atol, n)

    while direction * (t1 - t) > 0.0:
        if count >= max_nodes:
            return _finish(ts_arr, ys_arr, F_arr, count, 4, -1)
        min_step = 10.0 * fabs(nextafter(t, direction * INFINITY) - t)
        if h_abs > max_step:
            h_abs = max_step
        if h_abs < min_step:
            h_abs = min_step
        rejected = 0
        while True:
            if h_abs < min_step:
                return _finish(ts_arr, ys_arr, F_arr, count, 2, -1)
            h = h_abs * direction
            t_new = t + h
            if direction * (t_new - t1) > 0.0:
                t_new = t1
            h = t_new - t
            h_abs = fabs(h)
            if _step(system, t, y, f, h, K, n, par, y_new, f_new):
                h_abs *= MIN_FACTOR
                rejected = 1
                if h_abs < min_step:
                    return _finish(ts_arr, ys_arr, F_arr, count, 3, -1)
                continue
            e5 = 0.0
            e3 = 0.0
            for i in range(n):
                sc = atol + (fabs(y[i]) if fabs(y[i]) > fabs(y_new[i]) else fabs(y_new[i])) * rtol
                a5 = 0.0
                a3 = 0.0
                for s in range(NS + 1):
                    a5 += K[s][i] * _E5[s]
                    a3 += K[s][i] * _E3[s]
                a5 /= sc
                a3 /= sc
                e5 += a5 * a5
                e3 += a3 * a3
            if e5 == 0.0 and e3 == 0.0:
                err = 0.0
            else:
                err = h_abs * e5 / sqrt((e5 + 0.01 * e3) * n)
            if err < 1.0:
                if err == 0.0:
                    factor = MAX_FACTOR
                else:
                    factor = SAFETY * pow(err, ERR_EXP)
                    if factor > MAX_FACTOR:
                        factor = MAX_FACTOR
                if rejected and factor > 1.0:
                    factor = 1.0
                h_next = h_abs * factor
                break
            factor = SAFETY * pow(err, ERR_EXP)
            if factor < MIN_FACTOR:
                factor = MIN_FACTOR
            h_abs *= factor
            rejected = 1

        if _dense(system, t, y, f, y_new, f_new, h, K, n, par, Fbuf):
            return _finish(ts_arr, ys_arr, F_arr, count, 3, -1)
        if count >= cap:
            cap *= 2
            ts_arr = np.resize(ts_arr, cap)
            ys_arr = np.resize(ys_arr, (cap, n))
            F_arr = np.resize(F_arr, (cap, NPOW, n))
            ts = ts_arr
            ys = ys_arr
            Fs = F_arr
        for s in range(NPOW):
            for i in range(n):
                Fs[count - 1, s, i] = Fbuf[s * n + i]
        t = t_new
        for i in range(n):
            y[i] = y_new[i]
            f[i] = f_new[i]
        ts[count] = t
        for i in range(n):
            ys[count, i] = y[i]
        count += 1
        h_abs = h_next
        k = _events(system, t, y, par)
        if k >= 0:
            return _finish(ts_arr, ys_arr, F_arr, count, 1, k)
    return _finish(ts_arr, ys_arr, F_arr, count, 0, -1)


def _finish(ts_arr, ys_arr, F_arr, int count, int status, int event):
    return (np.ascontiguousarray(ts_arr[:count]), np.ascontiguousarray(ys_arr[:count]),
            np.ascontiguousarray(F_arr[:count - 1]), status, event)


def dense_eval(const double[::1] seg_t, const double[:, ::1] seg_y,
               const double[:, :, ::1] coeffs, const double[::1] t_query,
               double[:, ::1] out_value, double[:, ::1] out_deriv):
    """Evaluate the piecewise dense output and its time derivative."""
    cdef Py_ssize_t n_int = coeffs.shape[0]
    cdef Py_ssize_t npow = coeffs.shape[1]
    cdef Py_ssize_t n = coeffs.shape[2]
    cdef Py_ssize_t m, lo, hi, mid, idx, i, r
    cdef bint increasing = seg_t[n_int] >= seg_t[0]
    cdef double tq, t_old, h, x, val, der
    for m in range(t_query.shape[0]):
        tq = t_query[m]
        lo = 0
        hi = n_int
        # largest idx with seg_t[idx] <= tq (increasing) or >= tq (decreasing)
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if (increasing and seg_t[mid] <= tq) or ((not increasing) and seg_t[mid] >= tq):
                lo = mid
            else:
                hi = mid
        idx = lo
        t_old = seg_t[idx]
        h = seg_t[idx + 1] - t_old
        x = (tq - t_old) / h
        for i in range(n):
            val = 0.0
            der = 0.0
            for r in range(npow - 1, -1, -1):
                val = val + coeffs[idx, r, i]
                if (npow - 1 - r) % 2 == 0:
                    der = der * x + val
                    val = val * x
                else:
                    der = der * (1.0 - x) - val
                    val = val * (1.0 - x)
            out_value[m, i] = seg_y[idx, i] + val
            out_deriv[m, i] = der / h
