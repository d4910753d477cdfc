"""Benchmark the compiled subsequence-DTW kernel against the pure-numpy
fallback, and verify they agree bit for bit while at it.

Usage: python benchmarks/bench_dtw.py [--repeats N]
"""

import argparse
import time

import numpy as np

from termspot.match import _dtw_py

try:
    from termspot.match import _dtw_cy
except ImportError:
    _dtw_cy = None

SIZES = [
    (30, 150),  # short exemplar vs short utterance
    (45, 300),  # typical exemplar vs 3 s utterance
    (60, 500),  # long exemplar vs 5 s utterance
    (60, 2000),  # long utterance
]


def bench(kernel, cost, lam, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        kernel.dtw_scan(cost, lam)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    print(f"{'size':>12} {'pure-numpy':>12} {'compiled':>12} {'speedup':>9} {'Mcells/s':>10}")
    for m, n in SIZES:
        cost = rng.random((m, n)) * 2
        lam = 0.4
        t_py = bench(_dtw_py, cost, lam, args.repeats)
        if _dtw_cy is not None:
            out_cy = _dtw_cy.dtw_scan(cost, lam)
            out_py = _dtw_py.dtw_scan(cost, lam)
            for a, b in zip(out_cy, out_py):
                assert np.array_equal(a, b), "kernels disagree"
            t_cy = bench(_dtw_cy, cost, lam, args.repeats)
            print(
                f"{m}x{n:>8} {t_py * 1e3:>10.2f}ms {t_cy * 1e3:>10.2f}ms "
                f"{t_py / t_cy:>8.1f}x {m * n / t_cy / 1e6:>10.1f}"
            )
        else:
            print(f"{m}x{n:>8} {t_py * 1e3:>10.2f}ms {'n/a':>12} {'n/a':>9} {'n/a':>10}")
    if _dtw_cy is None:
        print("\ncompiled kernel not built; install with `pip install -e .` to compare")
    else:
        print("\nboth kernels returned bit-identical results on every size")


if __name__ == "__main__":
    main()
