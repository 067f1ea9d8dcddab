"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Set ``GTN_DISABLE_NUMBA=1`` before import to force the numpy versions.
Both paths are kept behaviourally identical; ``benchmarks/bench_kernels.py``
times one against the other.
"""
import os

import numpy as np
from scipy.linalg import solve_triangular

LOG_2PI = float(np.log(2.0 * np.pi))

USE_NUMBA = os.environ.get("GTN_DISABLE_NUMBA", "0") not in ("1", "true", "yes")
if USE_NUMBA:
    try:
        import numba
    except ImportError:  # pragma: no cover
        USE_NUMBA = False


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _mvn_logpdf_np(X, mean, chol):
    diff = (X - mean).T
    sol = solve_triangular(chol, diff, lower=True) if diff.size else diff
    half_logdet = np.sum(np.log(np.diag(chol)))
    d = mean.shape[0]
    return -0.5 * np.sum(sol * sol, axis=0) - half_logdet - 0.5 * d * LOG_2PI


def _product_np(means, covs, precision_scale):
    precs = np.linalg.inv(covs) * precision_scale
    lam = precs.sum(axis=0)
    cov = np.linalg.inv(lam)
    cov = 0.5 * (cov + cov.T)
    eta = np.einsum("pij,pj->i", precs, means)
    mean = cov @ eta
    d = means.shape[1]
    diff = mean[None, :] - means
    maha = np.einsum("pi,pij,pj->p", diff, precs, diff)
    _, logdet_precs = np.linalg.slogdet(precs)
    _, logdet_cov = np.linalg.slogdet(cov)
    log_scale = np.sum(-0.5 * d * LOG_2PI + 0.5 * logdet_precs - 0.5 * maha)
    log_scale += 0.5 * d * LOG_2PI + 0.5 * logdet_cov
    return mean, cov, log_scale


def _wrap_np(a):
    return a - 2.0 * np.pi * np.ceil((a - np.pi) / (2.0 * np.pi))


def _instantiate_np(means, covs, As, bs, angle_mask, precision_scale):
    K, P, d = means.shape
    out_mu = np.empty((K, d))
    out_cov = np.empty((K, d, d))
    out_ls = np.empty(K)
    for k in range(K):
        mu = np.einsum("pij,pj->pi", As, means[k]) + bs
        cov = np.einsum("pij,pjk,plk->pil", As, covs[k], As)
        for i in np.flatnonzero(angle_mask):
            ref = np.argmin(cov[:, i, i])
            mu[:, i] = mu[ref, i] + _wrap_np(mu[:, i] - mu[ref, i])
        out_mu[k], out_cov[k], out_ls[k] = _product_np(mu, cov, precision_scale)
    return out_mu, out_cov, out_ls


def _hsmm_viterbi_np(log_init, log_trans, log_dur, cum_emis):
    T = cum_emis.shape[0] - 1
    K, dmax = log_dur.shape
    delta = np.full((T + 1, K), -np.inf)
    back_d = np.zeros((T + 1, K), dtype=np.int64)
    back_h = np.full((T + 1, K), -1, dtype=np.int64)
    for t in range(1, T + 1):
        for k in range(K):
            best = -np.inf
            bd, bh = 0, -1
            for dur in range(1, min(dmax, t) + 1):
                ld = log_dur[k, dur - 1]
                if ld == -np.inf:
                    continue
                start = t - dur
                emis = cum_emis[t, k] - cum_emis[start, k]
                if start == 0:
                    prev, h = log_init[k], -1
                else:
                    cand = delta[start] + log_trans[:, k]
                    h = int(np.argmax(cand))
                    prev = cand[h]
                score = prev + ld + emis
                if score > best:
                    best, bd, bh = score, dur, h
            delta[t, k] = best
            back_d[t, k] = bd
            back_h[t, k] = bh
    return delta, back_d, back_h


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if USE_NUMBA:

    @numba.njit(cache=True)
    def _mvn_logpdf_nb(X, mean, chol):
        n, d = X.shape
        out = np.empty(n)
        half_logdet = 0.0
        for i in range(d):
            half_logdet += np.log(chol[i, i])
        z = np.empty(d)
        for r in range(n):
            acc = 0.0
            for i in range(d):
                s = X[r, i] - mean[i]
                for j in range(i):
                    s -= chol[i, j] * z[j]
                z[i] = s / chol[i, i]
                acc += z[i] * z[i]
            out[r] = -0.5 * acc - half_logdet - 0.5 * d * LOG_2PI
        return out

    @numba.njit(cache=True)
    def _product_nb(means, covs, precision_scale):
        P, d = means.shape
        precs = np.empty((P, d, d))
        lam = np.zeros((d, d))
        eta = np.zeros(d)
        logdet_sum = 0.0
        for p in range(P):
            pr = np.linalg.inv(covs[p]) * precision_scale
            precs[p] = pr
            lam += pr
            eta += pr @ means[p]
            logdet_sum += np.log(np.linalg.det(pr))
        cov = np.linalg.inv(lam)
        cov = 0.5 * (cov + cov.T)
        mean = cov @ eta
        ls = 0.0
        for p in range(P):
            diff = mean - means[p]
            ls += -0.5 * (diff @ (precs[p] @ diff))
        ls += -0.5 * P * d * LOG_2PI + 0.5 * logdet_sum
        ls += 0.5 * d * LOG_2PI + 0.5 * np.log(np.linalg.det(cov))
        return mean, cov, ls

    @numba.njit(cache=True)
    def _instantiate_nb(means, covs, As, bs, angle_mask, precision_scale):
        K, P, d = means.shape
        out_mu = np.empty((K, d))
        out_cov = np.empty((K, d, d))
        out_ls = np.empty(K)
        mu = np.empty((P, d))
        cov = np.empty((P, d, d))
        for k in range(K):
            for p in range(P):
                mu[p] = As[p] @ means[k, p] + bs[p]
                cov[p] = As[p] @ covs[k, p] @ As[p].T
            for i in range(d):
                if not angle_mask[i]:
                    continue
                ref = 0
                for p in range(1, P):
                    if cov[p, i, i] < cov[ref, i, i]:
                        ref = p
                for p in range(P):
                    a = mu[p, i] - mu[ref, i]
                    a = a - 2.0 * np.pi * np.ceil((a - np.pi) / (2.0 * np.pi))
                    mu[p, i] = mu[ref, i] + a
            m, c, ls = _product_nb(mu, cov, precision_scale)
            out_mu[k] = m
            out_cov[k] = c
            out_ls[k] = ls
        return out_mu, out_cov, out_ls

    @numba.njit(cache=True)
    def _hsmm_viterbi_nb(log_init, log_trans, log_dur, cum_emis):
        T = cum_emis.shape[0] - 1
        K, dmax = log_dur.shape
        delta = np.full((T + 1, K), -np.inf)
        back_d = np.zeros((T + 1, K), dtype=np.int64)
        back_h = np.full((T + 1, K), -1, dtype=np.int64)
        for t in range(1, T + 1):
            for k in range(K):
                best = -np.inf
                bd = 0
                bh = -1
                for dur in range(1, min(dmax, t) + 1):
                    ld = log_dur[k, dur - 1]
                    if ld == -np.inf:
                        continue
                    start = t - dur
                    emis = cum_emis[t, k] - cum_emis[start, k]
                    h = -1
                    if start == 0:
                        prev = log_init[k]
                    else:
                        prev = -np.inf
                        for hh in range(K):
                            c = delta[start, hh] + log_trans[hh, k]
                            if c > prev:
                                prev = c
                                h = hh
                        if h == -1:
                            continue
                    score = prev + ld + emis
                    if score > best:
                        best = score
                        bd = dur
                        bh = h
                delta[t, k] = best
                back_d[t, k] = bd
                back_h[t, k] = bh
        return delta, back_d, back_h


def _select(nb_name, np_fn):
    if USE_NUMBA:
        return globals()[nb_name]
    return np_fn


mvn_logpdf = _select("_mvn_logpdf_nb", _mvn_logpdf_np)
gauss_product = _select("_product_nb", _product_np)
instantiate_products = _select("_instantiate_nb", _instantiate_np)
hsmm_viterbi = _select("_hsmm_viterbi_nb", _hsmm_viterbi_np)

NUMPY_KERNELS = {
    "mvn_logpdf": _mvn_logpdf_np,
    "gauss_product": _product_np,
    "instantiate_products": _instantiate_np,
    "hsmm_viterbi": _hsmm_viterbi_np,
}
NUMBA_KERNELS = {
    "mvn_logpdf": mvn_logpdf,
    "gauss_product": gauss_product,
    "instantiate_products": instantiate_products,
    "hsmm_viterbi": hsmm_viterbi,
} if USE_NUMBA else dict(NUMPY_KERNELS)
