import os
import subprocess
import sys

import numpy as np
import pytest

from geotasknet import _kernels as K

from oracles import random_spd

NAMES = sorted(K.NUMPY_KERNELS)


def _case(name, rng):
    d = 4
    if name == "mvn_logpdf":
        return rng.normal(size=(30, d)), rng.normal(size=d), np.linalg.cholesky(random_spd(rng, d, 0.05, 2.0))
    if name == "gauss_product":
        P = 3
        return rng.normal(size=(P, d)), np.stack([random_spd(rng, d, 0.05, 2.0) for _ in range(P)]), 0.5
    if name == "instantiate_products":
        Kc, P = 3, 2
        means = rng.normal(size=(Kc, P, d))
        covs = np.stack([[random_spd(rng, d, 0.05, 1.0) for _ in range(P)] for _ in range(Kc)])
        As = np.stack([np.linalg.qr(rng.normal(size=(d, d)))[0] for _ in range(P)])
        bs = rng.normal(size=(P, d)) * 3
        return means, covs, As, bs, np.array([False, False, True, False]), 1.0
    Kc, T, dmax = 3, 25, 12
    log_trans = np.log(rng.dirichlet(np.ones(Kc), size=Kc))
    np.fill_diagonal(log_trans, -np.inf)
    log_dur = np.log(rng.dirichlet(np.ones(dmax), size=Kc))
    log_dur[:, :2] = -np.inf
    cum = np.vstack([np.zeros(Kc), np.cumsum(rng.normal(size=(T, Kc)), axis=0)])
    return np.log(rng.dirichlet(np.ones(Kc))), log_trans, log_dur, cum


@pytest.mark.parametrize("name", NAMES)
def test_numba_matches_numpy(name):
    rng = np.random.default_rng(NAMES.index(name))
    for _ in range(20):
        args = _case(name, rng)
        a = K.NUMPY_KERNELS[name](*args)
        b = K.NUMBA_KERNELS[name](*args)
        a, b = (a, b) if isinstance(a, tuple) else ((a,), (b,))
        for x, y in zip(a, b):
            np.testing.assert_allclose(x, y, rtol=1e-9, atol=1e-9)


def test_disable_switch():
    env = dict(os.environ, GTN_DISABLE_NUMBA="1")
    code = "from geotasknet import _kernels as K; print(K.USE_NUMBA, K.mvn_logpdf is K._mvn_logpdf_np)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["False", "True"]
