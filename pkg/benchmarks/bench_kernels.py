"""Compare the compiled kernels with the pure-Python fallback.

Run ``python3 benchmarks/bench_kernels.py``. Each kernel is timed on the
same inputs with both backends, and the outputs are checked to agree before
the timings are reported.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from conerace import kernels
from conerace.dynamics import VehicleParams

PARAMS = VehicleParams()
P = (PARAMS.M, PARAMS.I_zz, PARAMS.l_f, PARAMS.l_r, PARAMS.C_f, PARAMS.C_r, PARAMS.U_min)


def cases(rng: np.random.Generator):
    state = np.array([0.0, 0.0, 0.1, 5.0, 0.05, 0.2, 0.03, 0.2, 0.1, 0.02])
    inputs = rng.uniform(-0.3, 0.3, (20, 2))
    kappas = np.full(20, 1.0 / 20.0)
    points = rng.uniform(0.0, 20.0, (400, 2))
    return {
        "rk4_step (plant 10 ms)": lambda b: b.rk4_step(state, 0.1, 0.5, 0.05, 0.01, P),
        "rollout (MPC horizon, 20 x 100 ms)": lambda b: b.rollout(state, inputs, kappas, 0.1, P),
        "cluster_labels (400 points)": lambda b: b.cluster_labels(points, 0.3),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if kernels.compiled_backend is None:
        print("compiled backend not available; build with `pip install -e . --no-build-isolation`")
        return 1
    backends = {"python": kernels.python_backend, "compiled": kernels.compiled_backend}
    print(f"{'kernel':38s} {'python [us]':>12s} {'compiled [us]':>14s} {'speedup':>8s}")
    for name, fn in cases(np.random.default_rng(0)).items():
        a, b = fn(backends["python"]), fn(backends["compiled"])
        if not np.allclose(a, b, rtol=1e-12, atol=1e-12):
            raise SystemExit(f"backends disagree on {name}")
        times = {}
        for label, mod in backends.items():
            t = timeit.Timer(lambda: fn(mod))
            n, _ = t.autorange()
            times[label] = min(t.repeat(args.repeat, n)) / n * 1e6
        print(f"{name:38s} {times['python']:12.1f} {times['compiled']:14.1f} {times['python'] / times['compiled']:7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
