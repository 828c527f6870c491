"""Time the compiled and pure-Python integration kernels on the same workloads.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from s2cubic import kernels
from s2cubic.fixture import default_T

T = default_T()

WORKLOADS = {
    "jet sinh, t in [0, 5]": (kernels.SYS_JET, 0.0, 5.0, [0.0, 1.0, 0.0], [1e-10, 1e12, 0.0, 0.0, 0.0, 1e-9]),
    "jet tau=0.5T, t in [0, -20]": (kernels.SYS_JET, 0.0, -20.0, [0.0, 1.0, 0.5 * T],
                                    [1e-10, 1e12, 1e-4, 0.0, 0.0, 1e-9]),
    "jet tau=2, x'=0 event": (kernels.SYS_JET, 0.0, -30.0, [0.0, 1.0, 2.0], [1e-10, 1e12, 1e-4, 0.0, 0.0, 1e-9]),
    "phase plane, t in [0, 20]": (kernels.SYS_SMS, 0.0, 20.0, [0.3, -0.2], [50.0, 1e-9, 1.0, 0.0, 1.0]),
    "g-equation, s in [1, 0]": (kernels.SYS_GODE, 1.0, 0.0, [0.0, -0.5, 0.2], [1e-14, 1e12, 1e-10]),
}


def bench(backend, args, repeat):
    run = lambda: kernels.integrate(*args, backend=backend)
    ts, ys, *_ = run()
    best = min(timeit.repeat(run, number=1, repeat=repeat))
    return best, len(ts), ys[-1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    try:
        kernels.get_backend("cython")
        backends = ["cython", "python"]
    except ImportError:
        print("compiled extension not available; timing the Python kernel only")
        backends = ["python"]

    print(f"{'workload':32s} {'nodes':>6s} " + " ".join(f"{b + ' [ms]':>14s}" for b in backends)
          + ("   speedup   max |dy|" if len(backends) == 2 else ""))
    for name, wl in WORKLOADS.items():
        res = {b: bench(b, wl, args.repeat) for b in backends}
        line = f"{name:32s} {res[backends[0]][1]:6d} " + " ".join(f"{1e3 * res[b][0]:14.3f}" for b in backends)
        if len(backends) == 2:
            diff = np.max(np.abs(res["cython"][2] - res["python"][2]))
            line += f"   {res['python'][0] / res['cython'][0]:7.1f}x   {diff:.1e}"
        print(line)


if __name__ == "__main__":
    main()
