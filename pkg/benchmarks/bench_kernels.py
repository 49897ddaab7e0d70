"""Time the numba and numpy kernel backends on the same inputs.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Each kernel is called once before timing so JIT compilation is excluded.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from editgrpo import _kernels


def cases(rng):
    for n in (50, 200, 800):
        cost = rng.random((n, n))
        acc = _kernels.dtw_accumulate_numpy(cost)
        yield "dtw_accumulate", n, 0, (cost,)
        yield "dtw_backtrack", n, 1, (acc,)
    for n in (8, 64, 512):
        a = rng.integers(0, 5, n)
        b = rng.integers(0, 5, n)
        yield "edit_counts", n, 2, (a, b)
        yield "lcs_pairs", n, 3, (a, b)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if "numba" not in _kernels.BACKENDS:
        print("numba is not installed; only the numpy backend is available")
    rng = np.random.default_rng(args.seed)
    names = list(_kernels.BACKENDS)
    print(f"{'kernel':16s} {'n':>5s} " + " ".join(f"{b + ' ms':>10s}" for b in names) + f" {'speedup':>8s}")
    for name, n, k, inputs in cases(rng):
        times = []
        for b in names:
            fn = _kernels.BACKENDS[b][k]
            fn(*inputs)
            times.append(min(timeit.repeat(lambda: fn(*inputs), number=1, repeat=args.repeat)) * 1e3)
        speed = f"{times[0] / times[1]:8.1f}" if len(times) > 1 else ""
        print(f"{name:16s} {n:5d} " + " ".join(f"{t:10.3f}" for t in times) + f" {speed}")


if __name__ == "__main__":
    main()
