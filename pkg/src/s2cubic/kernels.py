"""Backend selection for the integration kernels.

The compiled extension is used when it imports cleanly; setting
``S2CUBIC_PURE_PYTHON=1`` forces the pure-Python implementation.
"""

from __future__ import annotations

import os

from . import _pykernels as _py
from ._pykernels import (  # noqa: F401
    DIMS, N_EVENTS, ST_DONE, ST_EVENT, ST_MAXSTEPS, ST_SINGULAR, ST_UNDERFLOW,
    SYS_GODE, SYS_HODE, SYS_JET, SYS_SMS,
)

_impl = _py
BACKEND = "python"
if os.environ.get("S2CUBIC_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _c
    except ImportError:
        pass
    else:
        _impl = _c
        BACKEND = "cython"


def get_backend(name=None):
    """Return the kernel module for ``name`` ("cython", "python" or None for the active one)."""
    if name is None:
        return _impl
    if name == "python":
        return _py
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


def integrate(system, t0, t1, y0, params, rtol=1e-12, atol=1e-14,
              max_step=float("inf"), first_step=0.0, max_nodes=200000, backend=None):
    mod = get_backend(backend)
    return mod.integrate(int(system), float(t0), float(t1), [float(v) for v in y0],
                         [float(v) for v in params], rtol, atol, max_step, first_step, max_nodes)


def dense_eval(ts, ys, coeffs, tq, backend=None):
    """Dense-output value and derivative at the query times ``tq``."""
    import numpy as np

    tq = np.ascontiguousarray(np.atleast_1d(np.asarray(tq, dtype=float)))
    n = ys.shape[1]
    val = np.empty((tq.size, n))
    der = np.empty((tq.size, n))
    if coeffs.shape[0] == 0:
        val[:] = ys[0]
        der[:] = np.nan
        return val, der
    get_backend(backend).dense_eval(np.ascontiguousarray(ts), np.ascontiguousarray(ys),
                                    np.ascontiguousarray(coeffs), tq, val, der)
    return val, der
