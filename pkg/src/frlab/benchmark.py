"""Benchmark the compiled grid-sum kernels against the numpy fallback.

    python -m frlab.benchmark [--quick]

Runs the three hot kernels on representative workloads with both
implementations, reports timings and cross-checks the values.
"""
import argparse
import time

import numpy as np

from ._kernels import _fallback
from . import _kernels as selected


def _time(fn, *args, repeat=1):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return out, best


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true", help="smaller workloads")
    args = ap.parse_args(argv)

    if not selected.HAVE_EXT:
        print("compiled extension not available; run `python setup.py build_ext"
              " --inplace` first (timings below are fallback vs fallback)")
    N = 8 if args.quick else 10
    beta = 4 * np.pi
    h = 2 * np.pi / beta
    n = int(np.ceil((1.5 * 2.0 ** N + 2.0) / h)) + 2

    print(f"== chiral_pair_sum (bubble), N={N}, grid {2*n}x{2*n} ==")
    a1, t1 = _time(selected.chiral_pair_sum, 1.0, 0.5, 1.0, 2.0 ** -N, h, n, n, 1.0, True)
    a2, t2 = _time(_fallback.chiral_pair_sum, 1.0, 0.5, 1.0, 2.0 ** -N, h, n, n, 1.0, True)
    print(f"selected: {t1:.2f}s   fallback: {t2:.2f}s   speedup x{t2/t1:.1f}")
    print(f"value agreement: {abs(a1[0]-a2[0]):.2e}")

    print(f"== chiral_ring_sum (3 legs), N={N} ==")
    s0 = np.array([0.0, 0.5, -0.5])
    s1 = np.array([0.0, 0.5, 0.0])
    b1, t1 = _time(selected.chiral_ring_sum, s0, s1, 1.0, 2.0 ** -N, h, n, n, 1.0)
    b2, t2 = _time(_fallback.chiral_ring_sum, s0, s1, 1.0, 2.0 ** -N, h, n, n, 1.0)
    print(f"selected: {t1:.2f}s   fallback: {t2:.2f}s   speedup x{t2/t1:.1f}")
    print(f"value agreement: {abs(b1-b2):.2e}")

    L = 256 if args.quick else 512
    betaL = 400.0
    hL = 2 * np.pi / betaL
    n0 = int(200.0 / hL)
    k1 = 2 * np.pi * np.arange(L) / L
    xi = 2 * (1 - np.cos(k1)) - 0.6
    xis = np.stack([xi, np.roll(xi, 5), np.roll(xi, -5)])
    u0s = np.array([0.0, 0.3, -0.3])
    vert = np.ones(L, dtype=complex)
    print(f"== lattice_ring_sum (3 legs), {2*n0} frequencies x L={L} ==")
    c1t, t1 = _time(selected.lattice_ring_sum, hL, n0, u0s, xis, vert)
    c2t, t2 = _time(_fallback.lattice_ring_sum, hL, n0, u0s, xis, vert)
    print(f"selected: {t1:.2f}s   fallback: {t2:.2f}s   speedup x{t2/t1:.1f}")
    print(f"value agreement: {abs(c1t-c2t):.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
