"""Time the compiled pair kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--sizes 64 256 1024] [--threads 1 2 4]

Prints one row per (routine, N, backend, threads) with the best-of-k wall time
and the speedup over numpy.  Results are also checked for bitwise agreement on
the force routine, which is what the determinism guarantees rest on.
"""

import argparse
import time

import numpy as np

from flocklab import _backend
from flocklab.kernels import Kernel


def _best(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def _cases(n, dim, kernel, p):
    rng = np.random.Generator(np.random.Philox(n))
    eta = rng.uniform(-1, 1, (n, dim))
    vel = rng.normal(size=(n, dim))
    w = np.full(n, 1.0 / n)
    jeta = np.broadcast_to(np.eye(dim), (n, dim, dim)).copy()
    jvel = rng.normal(size=(n, dim, dim))
    acc = np.empty_like(vel)
    jout = np.empty_like(jvel)
    fam, par = kernel.code, kernel.param

    def forces(t):
        _backend.alignment_forces(eta, vel, w, fam, par, p, 1.0, acc, t)
        return acc.copy()

    return {
        "alignment_forces": forces,
        "jacobian_forces": lambda t: _backend.jacobian_forces(eta, vel, jeta, jvel, w, fam, par, p, 1.0, jout, t),
        "max_pair_distance": lambda t: _backend.max_pair_distance(eta, t),
        "cross_moment": lambda t: _backend.cross_moment(eta, vel, w, 2.0, t),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[64, 256, 1024])
    ap.add_argument("--threads", type=int, nargs="+", default=[1, 2])
    ap.add_argument("--dim", type=int, default=2)
    ap.add_argument("--p", type=float, default=2.5)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    kernel = Kernel.powerlaw(0.5)
    have_compiled = "compiled" in _backend.available()
    if not have_compiled:
        print("compiled extension not built; timing numpy only")
    print(f"{'routine':<18} {'N':>6} {'backend':<9} {'threads':>7} {'seconds':>11} {'speedup':>8}")
    for n in args.sizes:
        cases = _cases(n, args.dim, kernel, args.p)
        for name, fn in cases.items():
            with _backend.using("numpy"):
                base = _best(lambda: fn(1), max(1, args.repeat // 2 if n > 512 else args.repeat))
            print(f"{name:<18} {n:>6} {'numpy':<9} {1:>7} {base:>11.3e} {1.0:>8.1f}")
            if not have_compiled:
                continue
            for t in args.threads:
                with _backend.using("compiled"):
                    sec = _best(lambda: fn(t), args.repeat)
                print(f"{name:<18} {n:>6} {'compiled':<9} {t:>7} {sec:>11.3e} {base / sec:>8.1f}")
        if have_compiled:
            fn = cases["alignment_forces"]
            with _backend.using("numpy"):
                ref = fn(1)
            with _backend.using("compiled"):
                same = all(np.array_equal(ref, fn(t)) for t in args.threads)
            print(f"  N={n}: compiled forces bitwise equal to numpy: {same}")


if __name__ == "__main__":
    main()
