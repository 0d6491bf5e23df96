"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel and input size with the median time of each backend
and the speedup. Exits non-zero if the extension is not built.
"""
import argparse
import sys
import timeit

import numpy as np

from prefermab import _pykernels

try:
    from prefermab import _kernels
except ImportError:
    sys.exit("compiled extension not built; run `pip install -e . --no-build-isolation` first")


def _mlp_args(rng, rows, n_in, n_out, hidden=16):
    x = rng.standard_normal((rows, n_in))
    W1, W2, W3 = (rng.standard_normal(s) * 0.3 for s in ((n_in, hidden), (hidden, hidden), (hidden, n_out)))
    b1, b2, b3 = (rng.standard_normal(n) * 0.1 for n in (hidden, hidden, n_out))
    return x, W1, b1, W2, b2, W3, b3


def cases(rng):
    for rows in (17, 210, 3500):
        args = _mlp_args(rng, rows, 6, 2)
        yield f"mlp_forward rows={rows}", "mlp_forward", args
        x, W1, b1, W2, b2, W3, b3 = args
        h1, h2, _ = _pykernels.mlp_forward(*args)
        dy = rng.standard_normal((rows, 2))
        yield f"mlp_backward rows={rows}", "mlp_backward", (x, h1, h2, W1, W2, W3, dy)
    for n in (21, 96, 500):
        p = rng.dirichlet(np.ones(3), size=n)
        costs = np.array([0.0, 1.0, 2.0])
        xi = (rng.random(n) < 0.8).astype(np.int8)
        yield f"greedy_proba arms={n}", "greedy_proba", (p, costs, n / 3.0, xi)
    for n in (100, 5000):
        y = np.cumsum(rng.standard_normal(n)) * 0.1 + np.linspace(0, 5, n)
        w = rng.random(n) + 0.5
        yield f"pav points={n}", "pav", (y, w)


def bench(fn, args, repeat):
    number = max(1, int(0.05 / max(min(timeit.repeat(lambda: fn(*args), number=1, repeat=3)), 1e-7)))
    times = timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)
    return float(np.median(times)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=7)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'case':28s} {'python us':>11s} {'cython us':>11s} {'speedup':>8s}")
    for label, name, fargs in cases(rng):
        t_py = bench(getattr(_pykernels, name), fargs, args.repeat)
        t_cy = bench(getattr(_kernels, name), fargs, args.repeat)
        print(f"{label:28s} {t_py * 1e6:11.1f} {t_cy * 1e6:11.1f} {t_py / t_cy:7.2f}x")


if __name__ == "__main__":
    main()
