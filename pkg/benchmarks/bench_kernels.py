#!/usr/bin/env python3
"""Timing comparison of the compiled and pure-Python kernel backends.

The hot kernels (RK4 step map, horizon rollout, finite-difference
linearization, plant substeps) are imported from both backends directly,
checked against each other, and timed back to back.  ``--end-to-end``
additionally times whole controller solves in two subprocesses, one with
LMPCQ_PURE=1 and one without.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from lmpcq._kernels import _pure

try:
    from lmpcq._kernels import _core
except ImportError:
    _core = None

M, G = 1.0, 9.81
DT = 0.1


def _workload(seed=4):
    rng = np.random.default_rng(seed)
    x = np.zeros(10)
    x[0:3] = rng.uniform(-1, 1, 3)
    x[3:6] = rng.uniform(-2, 2, 3)
    q = rng.normal(size=4)
    x[6:10] = q / np.linalg.norm(q)
    u = np.array([G, 0.3, -0.2, 0.1])
    U = np.tile(u, (10, 1)) + 0.05 * rng.normal(size=(10, 4))
    return x, u, U


def _best_of(fn, repeat, inner):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        best = min(best, (time.perf_counter() - t0) / inner)
    return best


def bench_kernels(repeat):
    x, u, U = _workload()
    cases = [
        ("rk4_step", lambda b: b.rk4_step(x, u, DT, M, G), 200),
        ("rollout(N=10)", lambda b: b.rollout(x, U, DT, M, G), 50),
        ("linearize", lambda b: b.linearize(x, u, DT, M, G), 20),
        ("substeps(10)", lambda b: b.substeps(x, u, DT, 10, M, G), 50),
    ]
    print(f"{'kernel':<16}{'compiled':>12}{'pure':>12}{'speedup':>10}")
    for name, call, inner in cases:
        t_pure = _best_of(lambda: call(_pure), repeat, inner)
        if _core is None:
            print(f"{name:<16}{'-':>12}{1e6 * t_pure:>10.1f}us{'-':>10}")
            continue
        ref, got = call(_pure), call(_core)
        ref = ref[0] if isinstance(ref, tuple) else ref
        got = got[0] if isinstance(got, tuple) else got
        assert np.allclose(ref, got, atol=1e-12), f"{name}: backends disagree"
        t_core = _best_of(lambda: call(_core), repeat, inner)
        print(f"{name:<16}{1e6 * t_core:>10.1f}us{1e6 * t_pure:>10.1f}us"
              f"{t_pure / t_core:>9.1f}x")


_E2E_SNIPPET = """
import numpy as np, time
from lmpcq._kernels import BACKEND
from lmpcq.task import TaskConfig, run_task
cfg = TaskConfig(iterations=2)
res = run_task(cfg)
ms = 1e3 * np.array([s.solve_time for r in res.reports for s in r.stats])
print(f"{BACKEND}: {len(ms)} solves, median {np.median(ms):.2f} ms, "
      f"p95 {np.percentile(ms, 95):.2f} ms")
"""


def bench_end_to_end():
    for pure in ("0", "1"):
        env = dict(os.environ, LMPCQ_PURE=pure)
        subprocess.run([sys.executable, "-c", _E2E_SNIPPET], env=env, check=True)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=7,
                    help="best-of repetitions per measurement (default 7)")
    ap.add_argument("--end-to-end", action="store_true",
                    help="also time full controller solves per backend")
    args = ap.parse_args()
    if _core is None:
        print("compiled backend not available; showing pure-Python times only")
    bench_kernels(args.repeat)
    if args.end_to_end:
        print(flush=True)
        bench_end_to_end()


if __name__ == "__main__":
    main()
