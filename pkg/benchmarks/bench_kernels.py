"""Benchmark: numba kernels vs the pure-numpy fallback.

Times the three hot kernels at several particle counts, then a full
particle-filter pass under each backend (separate processes, since the
backend is fixed at import time).

Run from the repository root:

    python3 -m benchmarks.bench_kernels
"""

import os
import subprocess
import sys
import time

import numpy as np

from iterfilt import _kernels as k
from iterfilt import accel


def best_of(fn, repeats=7):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels():
    if not accel.NUMBA_AVAILABLE:
        print("numba not importable; nothing to compare")
        return
    gen = np.random.default_rng(0)
    print(f"{'kernel':<28}{'J':>10}{'numpy':>12}{'numba':>12}{'speedup':>9}")
    for j in (10_000, 100_000, 1_000_000):
        w = gen.random(j) + 1e-12
        cum = np.cumsum(w)
        unsorted_pos = gen.random(j) * cum[-1]
        sorted_pos = (np.arange(j) + gen.random()) / j * cum[-1]
        ascending = np.sort(np.exp(gen.normal(size=j)))
        rows = gen.normal(size=(j, 2))
        center = np.zeros(2)

        cases = [
            ("ancestor_indices", lambda: k.ancestor_indices_numpy(cum, unsorted_pos),
             lambda: k.ancestor_indices_numba(cum, unsorted_pos)),
            ("ancestor_indices_sorted", lambda: k.ancestor_indices_sorted_numpy(cum, sorted_pos),
             lambda: k.ancestor_indices_sorted_numba(cum, sorted_pos)),
            ("pair_sums", lambda: k.pair_sums_numpy(ascending),
             lambda: k.pair_sums_numba(ascending)),
            ("scatter_matrix", lambda: k.scatter_matrix_numpy(rows, center),
             lambda: k.scatter_matrix_numba(rows, center)),
        ]
        for name, f_np, f_nb in cases:
            f_nb()  # trigger JIT before timing
            t_np = best_of(f_np)
            t_nb = best_of(f_nb)
            print(
                f"{name:<28}{j:>10,}{t_np * 1e3:>10.3f}ms{t_nb * 1e3:>10.3f}ms"
                f"{t_np / t_nb:>8.2f}x"
            )


_CHILD_SCRIPT = r"""
import time
import numpy as np
from iterfilt import (KernelSpec, PerturbationScales, RngStream, TimeGrid,
                      extend_model, make_lgss, particle_filter, simulate, accel)

built = make_lgss({"a": 0.8, "q": 1.0, "r": 1.0}, free=("a", "q"))
grid = TimeGrid.uniform(50)
_, data = simulate(built.model, built.theta_start, grid, RngStream(0))
ext = extend_model(built.model, KernelSpec.identity(2),
                   PerturbationScales(sigma=0.01, tau=0.1), built.theta_start)
particle_filter(ext, data, n_particles=20_000, rng=RngStream(1))  # warm up
best = float("inf")
for _ in range(5):
    t0 = time.perf_counter()
    particle_filter(ext, data, n_particles=20_000, rng=RngStream(1))
    best = min(best, time.perf_counter() - t0)
print(f"{accel.BACKEND} {best:.4f}")
"""


def bench_filter():
    print("\naugmented particle filter, J=20,000, N=50 (best of 5):")
    for backend in ("numpy", "numba"):
        env = dict(os.environ)
        env["ITERFILT_BACKEND"] = backend
        proc = subprocess.run(
            [sys.executable, "-c", _CHILD_SCRIPT],
            env=env,
            capture_output=True,
            text=True,
        )
        if proc.returncode != 0:
            print(f"  {backend}: failed\n{proc.stderr}")
            continue
        name, seconds = proc.stdout.split()
        print(f"  {name:<8}{float(seconds) * 1e3:>10.1f}ms")


if __name__ == "__main__":
    bench_kernels()
    bench_filter()
