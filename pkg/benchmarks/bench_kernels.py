"""Time each hot kernel on the compiled and pure-Python backends.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from dgcal import kernels


def cases(rng):
    z = rng.normal(scale=3, size=(20_000, 10))
    y = rng.integers(10, size=20_000)
    x = rng.normal(size=(5_000, 8))
    c = rng.normal(size=(8, 8))
    conf = rng.uniform(size=50_000)
    corr = rng.random(50_000) < 0.7
    hx = rng.normal(size=(400, 4))
    hl = rng.integers(6, size=400).astype(np.int64)
    return {
        "row_nll 20000x10": lambda b: kernels.row_nll(z, y, 0.7, backend=b),
        "assign_nearest 5000x8, k=8": lambda b: kernels.assign_nearest(x, c, backend=b),
        "bin_stats 50000, M=15": lambda b: kernels.bin_stats(conf, corr, 15, backend=b),
        "hartigan_pass 400x4, k=6": lambda b: kernels.hartigan_pass(hx, hl.copy(), 6, backend=b),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = kernels.available_backends()
    print(f"default backend: {kernels.BACKEND}")
    print(f"{'kernel':30s}" + "".join(f"{b:>14s}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, fn in cases(np.random.default_rng(0)).items():
        times = {}
        for b in backends:
            times[b] = min(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat))
        row = f"{name:30s}" + "".join(f"{times[b] * 1e3:11.2f} ms" for b in backends)
        if "native" in times and "python" in times:
            row += f"{times['python'] / times['native']:11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
