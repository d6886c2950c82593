"""Time the Feynman-Kac path loop: compiled core against the NumPy fallback.

    python benchmarks/bench_fk.py [--paths 256] [--steps 1600] [--repeat 3]

Both backends see the same Brownian increments; the script checks that their
exponents agree and prints the best-of-``repeat`` wall time of each.
"""

import argparse
import time

import numpy as np

from deltabose import _native
from deltabose import mollifier as moll
from deltabose import quadrature_mc as qmc


def best_time(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=256)
    ap.add_argument("--steps", type=int, default=1600)
    ap.add_argument("--eps", type=float, default=0.1)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    h = moll.standard_bump()
    beta = moll.beta_eps(args.eps, 0.0, h)
    dt = args.eps ** 2 / 64
    x0 = np.array([[0.0, 0.0], [0.05, 0.0]])
    pairs = np.array([[0, 1]], dtype=np.int64)
    incr = qmc.stream(0, 99).standard_normal((args.steps, args.paths, 2, 2)) * np.sqrt(dt)

    def run(which):
        return _native.fk_block_bump(x0, incr, dt, pairs, beta, args.eps, h.normalization,
                                     which=which)

    t_py, (e_py, _) = best_time(lambda: run("python"), args.repeat)
    print(f"python : {t_py * 1e3:9.1f} ms  ({args.paths} paths x {args.steps} steps)")
    if not _native.HAVE_NATIVE:
        print("native : not built")
        return 0
    t_c, (e_c, _) = best_time(lambda: run("native"), args.repeat)
    dev = float(np.max(np.abs(e_c - e_py)) / max(1.0, float(np.max(np.abs(e_py)))))
    print(f"native : {t_c * 1e3:9.1f} ms  speedup {t_py / t_c:.1f}x  max rel dev {dev:.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
