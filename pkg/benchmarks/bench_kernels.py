"""Time the compiled kernels against the numpy fallback.

Usage: ``python3 benchmarks/bench_kernels.py [--repeat N]``
"""

import argparse
import timeit

import numpy as np

from hpgrf import _accel


def cases(rng):
    n, M, J = 1000, 2000, 3
    pts = rng.uniform(0, 100, (n, 2))
    theta = rng.uniform(0, 100, (M, 2))
    types = rng.integers(0, J, n)
    logw = rng.normal(-5, 3, (J, M))
    inv = np.full(J, 0.5 / 25.0)
    u = rng.uniform(size=n)
    w = rng.gamma(1.0, 1.0, M)
    lam = rng.uniform(0.5, 2.0, 400)
    radii = np.geomspace(1, 35, 20)
    pp = rng.uniform(0, 100, (400, 2))
    return {
        "sample_assignments (1000 foci x 2000 jumps)": lambda impl: _accel.sample_assignments(pts, types, theta, logw, inv, u, impl=impl),
        "kernel_sums (1000 points x 2000 jumps)": lambda impl: _accel.kernel_sums(pts, theta, w, 0.02, impl=impl),
        "pair_counts (400 points x 20 radii)": lambda impl: _accel.pair_counts(pp, 1 / lam, radii, impl=impl),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    try:
        from hpgrf import _core  # noqa: F401
    except ImportError:
        print("compiled extension not built; only the fallback is timed")
        impls = ["python"]
    else:
        impls = ["cython", "python"]
    rng = np.random.default_rng(0)
    print(f"{'kernel':48s} " + " ".join(f"{i:>12s}" for i in impls) + "  speed-up")
    for name, fn in cases(rng).items():
        times = []
        for impl in impls:
            fn(impl)
            times.append(min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat)))
        cols = " ".join(f"{t * 1e3:10.2f}ms" for t in times)
        ratio = f"{times[-1] / times[0]:8.1f}x" if len(times) == 2 else ""
        print(f"{name:48s} {cols}  {ratio}")


if __name__ == "__main__":
    main()
