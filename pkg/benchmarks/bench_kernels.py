"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--size N] [--repeat R]

Both backends are imported directly, so the TDMINV_BACKEND setting does not
matter here.  Outputs are compared before timing.
"""
import argparse
import timeit

import numpy as np

from tdminv import _pykernels

try:
    from tdminv import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def cases(n, rng):
    img = rng.random((n, n))
    # sample positions: a smooth perturbation of the pixel centres
    i, j = np.meshgrid(np.arange(n, dtype=float), np.arange(n, dtype=float), indexing="ij")
    c0 = i + 1.5 * np.sin(2 * np.pi * j / n)
    c1 = j + 1.5 * np.cos(2 * np.pi * i / n)
    vals = rng.random((n, n))
    return {
        "bilinear_sample": lambda k: k.bilinear_sample(img, c0, c1),
        "bilinear_sample_grad": lambda k: k.bilinear_sample_grad(img, c0, c1),
        "bilinear_scatter": lambda k: k.bilinear_scatter(vals, c0, c1, (n, n)),
        "shepard_resample": lambda k: k.shepard_resample(c0, c1, vals, (n, n)),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-12, atol=1e-12)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled kernels are not built; only the numpy timings are shown")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'numpy ms':>10}{'compiled ms':>13}{'speedup':>9}  match")
    for name, call in cases(args.size, rng).items():
        t_py = min(timeit.repeat(lambda: call(_pykernels), number=1, repeat=args.repeat)) * 1e3
        if _ckernels is None:
            print(f"{name:<22}{t_py:>10.3f}")
            continue
        t_c = min(timeit.repeat(lambda: call(_ckernels), number=1, repeat=args.repeat)) * 1e3
        ok = _same(call(_pykernels), call(_ckernels))
        print(f"{name:<22}{t_py:>10.3f}{t_c:>13.3f}{t_py / t_c:>8.1f}x  {'yes' if ok else 'NO'}")


if __name__ == "__main__":
    main()
