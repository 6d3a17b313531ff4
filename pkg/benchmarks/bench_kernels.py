"""Compare the compiled scatter-add kernel with the pure-python fallback.

Two measurements:
  * the raw scatter-add-outer microkernel on synthetic id tables
  * an end-to-end generic-engine convolution run (lamplighter walk), the
    workload the kernel exists for

The end-to-end run re-executes this script in a subprocess with
WALKOPS_PURE_PYTHON=1 so the fallback is selected at import, exactly as it
would be on a machine without the extension.

    python benchmarks/bench_kernels.py
"""

import os
import subprocess
import sys
import time

import numpy as np


def bench_micro(reps=5):
    from walkops import _kernels_py

    try:
        from walkops import _kernels as compiled
    except ImportError:
        compiled = None

    rng = np.random.default_rng(0)
    n_ids = 400_000
    rows = rng.integers(0, n_ids, size=(120_000, 6)).astype(np.int64)
    level_vals = rng.random(120_000)
    mu_vals = rng.random(6)

    results = {}
    for name, mod in (("compiled", compiled), ("python", _kernels_py)):
        if mod is None:
            continue
        best = float("inf")
        for _ in range(reps):
            acc = np.zeros(n_ids)
            t0 = time.perf_counter()
            mod.scatter_add_outer(acc, rows, level_vals, mu_vals)
            best = min(best, time.perf_counter() - t0)
        results[name] = best
    return results


def bench_end_to_end(depth=18):
    import walkops as w
    from walkops import kernel_backend

    lamp = w.LamplighterGroup(1)
    mu = w.parse_measure(
        "(0,{}) 1/4\n(1,{}) 1/4\n(-1,{}) 1/4\n(0,{0}) 1/4", lamp
    )
    t0 = time.perf_counter()
    cache = w.convolution_powers(lamp, mu, depth, engine="generic")
    elapsed = time.perf_counter() - t0
    return kernel_backend, elapsed, cache.level_mass(depth)


def main():
    if os.environ.get("WALKOPS_BENCH_CHILD"):
        backend, elapsed, mass = bench_end_to_end()
        print(f"end-to-end [{backend:8s}]  lamplighter depth 18: "
              f"{elapsed:7.3f} s  (mass check {mass:.12f})")
        return

    micro = bench_micro()
    for name, secs in micro.items():
        print(f"scatter-add [{name:8s}]  120k x 6 products: {secs * 1e3:8.2f} ms")
    if {"compiled", "python"} <= micro.keys():
        print(f"micro speedup: {micro['python'] / micro['compiled']:.1f}x")

    env = dict(os.environ, WALKOPS_BENCH_CHILD="1")
    subprocess.run([sys.executable, __file__], env=env, check=True)
    env["WALKOPS_PURE_PYTHON"] = "1"
    subprocess.run([sys.executable, __file__], env=env, check=True)


if __name__ == "__main__":
    main()
