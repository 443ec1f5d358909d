"""Compare the compiled covariance assembly against the NumPy fallback.

Run with ``python3 benchmarks/bench_kernels.py [--sizes 500 2000 4900]``.
"""
import argparse
import timeit

import numpy as np

from dgpemu import _backend


def _cases(n, m, d, rng):
    Xa, Xb = rng.random((n, d)), rng.random((m, d))
    la, lb = rng.normal(size=n), rng.normal(size=m)
    inv_lam = np.full(d, 1 / 0.3)
    return {
        "stat_cross": lambda impl: impl.stat_cross(Xa, Xb, inv_lam, 1.0, 2),
        "nonstat_cross": lambda impl: impl.nonstat_cross(Xa, Xb, la, lb, 1 / 0.3, 1.0, 2),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--sizes", type=int, nargs="+", default=[500, 2000, 4900])
    p.add_argument("--m", type=int, default=200)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    impls = {"python": _backend.python_impl}
    if _backend.compiled_impl is not None:
        impls["compiled"] = _backend.compiled_impl
    else:
        print("compiled extension not built; timing the fallback only")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<14}{'n':>6}{'impl':>10}{'best ms':>10}{'speedup':>9}")
    for n in args.sizes:
        for name, fn in _cases(n, args.m, args.d, rng).items():
            best = {}
            for label, impl in impls.items():
                fn(impl)  # warm-up
                best[label] = min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat))
            ref = fn(impls["python"])
            for label, t in best.items():
                if label != "python":
                    err = np.max(np.abs(fn(impls[label]) - ref))
                    assert err < 1e-12, f"{label} disagrees with the fallback: {err}"
                speed = best["python"] / t
                print(f"{name:<14}{n:>6}{label:>10}{1e3 * t:>10.2f}{speed:>9.2f}")


if __name__ == "__main__":
    main()
