"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one CSV row per kernel: name, numpy seconds, numba seconds, ratio.
The first numba call (compilation) is excluded.
"""
import argparse
import csv
import sys
import timeit

import numpy as np

from geotasknet import _kernels as K


def _spd(rng, d):
    a = rng.normal(size=(d, d))
    return a @ a.T + d * np.eye(d)


def cases(rng):
    d, P, Kc = 4, 4, 6
    yield "mvn_logpdf", (rng.normal(size=(2000, d)), rng.normal(size=d), np.linalg.cholesky(_spd(rng, d)))
    yield "gauss_product", (rng.normal(size=(P, d)), np.stack([_spd(rng, d) for _ in range(P)]), 1.0)
    yield "instantiate_products", (rng.normal(size=(Kc, P, d)),
                                   np.stack([[_spd(rng, d) for _ in range(P)] for _ in range(Kc)]),
                                   np.stack([np.linalg.qr(rng.normal(size=(d, d)))[0] for _ in range(P)]),
                                   rng.normal(size=(P, d)), np.array([False, False, True, False]), 1.0)
    T, dmax = 50, 30
    log_trans = np.log(rng.dirichlet(np.ones(Kc), size=Kc))
    np.fill_diagonal(log_trans, -np.inf)
    yield "hsmm_viterbi", (np.log(rng.dirichlet(np.ones(Kc))), log_trans,
                           np.log(rng.dirichlet(np.ones(dmax), size=Kc)),
                           np.vstack([np.zeros(Kc), np.cumsum(rng.normal(size=(T, Kc)), axis=0)]))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args(argv)
    if not K.USE_NUMBA:
        print("numba is disabled; both columns time the numpy kernels", file=sys.stderr)
    w = csv.writer(sys.stdout)
    w.writerow(["kernel", "numpy_s", "numba_s", "speedup"])
    for name, a in cases(np.random.default_rng(0)):
        K.NUMBA_KERNELS[name](*a)  # compile
        t_np = min(timeit.repeat(lambda: K.NUMPY_KERNELS[name](*a), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: K.NUMBA_KERNELS[name](*a), number=1, repeat=args.repeat))
        w.writerow([name, f"{t_np:.3e}", f"{t_nb:.3e}", f"{t_np / t_nb:.1f}"])


if __name__ == "__main__":
    main()
