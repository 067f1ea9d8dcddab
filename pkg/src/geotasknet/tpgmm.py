"""Task-parameterized Gaussian mixture models.

A TP-GMM stores, for each of K components, one Gaussian per frame. Data
are the same datum observed from P frames, shaped ``(N, P, d)``. Learning
couples the frames through shared responsibilities; instantiation maps each
frame's Gaussian into the global frame and multiplies them.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .gauss import Frame, Gaussian, floor_eigenvalues, regularize


MAX_ANGLE_VAR = 1e4
UNIFORM_ANGLE_VAR = 1.0  # wrapped spreads above this are treated as uninformative
UNIFORM_ALPHA = 0.01  # angles whose uniformity a Rayleigh test cannot reject are uninformative too


def rayleigh_pvalue(R: float, n: float) -> float:
    """Rayleigh test p-value for mean resultant length ``R`` of ``n`` angles (uniform null)."""
    if n <= 0:
        return 1.0
    Rn = R * n
    return float(min(1.0, np.exp(np.sqrt(1.0 + 4.0 * n + 4.0 * (n * n - Rn * Rn)) - (1.0 + 2.0 * n))))


@dataclass
class EMConfig:
    tol: float = 1e-6
    max_iter: int = 200
    seed: int = 0
    n_init: int = 1
    min_var: float = 0.0
    kmeans_iter: int = 10


@dataclass(frozen=True, eq=False)
class FrameObservation:
    """One datum seen from every frame."""

    per_frame: tuple

    def __post_init__(self):
        vecs = tuple(np.asarray(v, dtype=float) for v in self.per_frame)
        if len({v.shape for v in vecs}) != 1:
            raise ValueError("all per-frame vectors must share a dimension")
        object.__setattr__(self, "per_frame", vecs)

    def as_array(self) -> np.ndarray:
        return np.stack(self.per_frame)


@dataclass(frozen=True, eq=False)
class GMM:
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    angle_dims: tuple = ()

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or len(w) == 0:
            raise ValueError("GMM needs at least one component")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("GMM weights must lie on the simplex")
        means = np.asarray(self.means, dtype=float).reshape(len(w), -1)
        covs = np.asarray(self.covs, dtype=float).reshape(len(w), means.shape[1], means.shape[1])
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", covs)
        object.__setattr__(self, "angle_dims", tuple(self.angle_dims))
        object.__setattr__(self, "_chols", np.linalg.cholesky(covs))

    @classmethod
    def from_components(cls, weights, comps, angle_dims=()) -> "GMM":
        return cls(weights, np.stack([g.mean for g in comps]), np.stack([g.cov for g in comps]), angle_dims)

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def components(self) -> list:
        return [Gaussian(m, c) for m, c in zip(self.means, self.covs)]

    def component_logpdf(self, x) -> np.ndarray:
        """Per-component log densities at ``x`` (without weights)."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"expected a vector of dimension {self.dim}, got shape {x.shape}")
        out = np.empty(self.n_components)
        for k in range(self.n_components):
            xk = x.copy()
            for i in self.angle_dims:
                a = xk[i] - self.means[k, i]
                xk[i] = self.means[k, i] + a - 2 * np.pi * np.ceil((a - np.pi) / (2 * np.pi))
            out[k] = _kernels.mvn_logpdf(xk[None, :], self.means[k], self._chols[k])[0]
        return out

    def log_pdf(self, x) -> float:
        with np.errstate(divide="ignore"):
            return float(logsumexp(np.log(self.weights) + self.component_logpdf(x)))

    def pdf(self, x) -> float:
        return float(np.exp(self.log_pdf(x)))

    def mode_index(self) -> int:
        half_logdet = np.sum(np.log(np.diagonal(self._chols, axis1=1, axis2=2)), axis=1)
        with np.errstate(divide="ignore"):
            score = np.log(self.weights) - half_logdet
        return int(np.argmax(score))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        ks = rng.choice(self.n_components, size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        return self.means[ks] + np.einsum("nij,nj->ni", self._chols[ks], z)


def gmm_pdf(g: GMM, x) -> float:
    return g.pdf(x)


def gmm_log_pdf(g: GMM, x) -> float:
    return g.log_pdf(x)


def mode(g: GMM) -> np.ndarray:
    """Mean of the component with the largest ``w_k * pdf_k(mu_k)``; lowest index on ties."""
    return g.means[g.mode_index()].copy()


@dataclass(frozen=True, eq=False)
class TPGMM:
    priors: np.ndarray
    means: np.ndarray  # (K, P, d)
    covs: np.ndarray  # (K, P, d, d)
    angle_dims: tuple = ()
    log_likelihoods: tuple = field(default=(), repr=False)
    converged: bool = True

    def __post_init__(self):
        priors = np.asarray(self.priors, dtype=float)
        means = np.asarray(self.means, dtype=float)
        covs = np.asarray(self.covs, dtype=float)
        if means.ndim != 3 or covs.shape != means.shape + (means.shape[2],):
            raise ValueError("TPGMM expects means (K, P, d) and covs (K, P, d, d)")
        if priors.shape != (means.shape[0],):
            raise ValueError("one prior per component required")
        if np.any(priors < 0) or abs(priors.sum() - 1.0) > 1e-9:
            raise ValueError("priors must lie on the simplex")
        object.__setattr__(self, "priors", priors)
        object.__setattr__(self, "means", np.ascontiguousarray(means))
        object.__setattr__(self, "covs", np.ascontiguousarray(covs))
        object.__setattr__(self, "angle_dims", tuple(int(i) for i in self.angle_dims))

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def n_frames(self) -> int:
        return self.means.shape[1]

    @property
    def dim(self) -> int:
        return self.means.shape[2]

    def component(self, k: int, p: int) -> Gaussian:
        return Gaussian(self.means[k, p], self.covs[k, p])

    @cached_property
    def _inv_chols(self) -> np.ndarray:
        return np.linalg.inv(np.linalg.cholesky(self.covs))

    def frame_mahalanobis(self, x) -> np.ndarray:
        """Squared Mahalanobis distance of one datum ``(P, d)`` summed over frames, per component."""
        x = np.asarray(x, dtype=float)
        if x.shape != self.means.shape[1:]:
            raise ValueError(f"expected a datum shaped {self.means.shape[1:]}, got {x.shape}")
        diff = x[None] - self.means
        for i in self.angle_dims:
            diff[..., i] = _wrap(diff[..., i])
        z = np.einsum("kpij,kpj->kpi", self._inv_chols, diff)
        return np.sum(z * z, axis=(1, 2))


def _as_data(data) -> np.ndarray:
    if isinstance(data, np.ndarray):
        X = np.asarray(data, dtype=float)
    else:
        X = np.stack([o.as_array() if isinstance(o, FrameObservation) else np.asarray(o, dtype=float)
                      for o in data])
    if X.ndim == 2:
        X = X[:, None, :]
    if X.ndim != 3:
        raise ValueError("data must be shaped (N, P, d)")
    return X


def _farthest_point_centers(Z: np.ndarray, K: int) -> np.ndarray:
    idx = [int(np.argmin(np.sum((Z - Z.mean(axis=0)) ** 2, axis=1)))]
    dmin = np.sum((Z - Z[idx[0]]) ** 2, axis=1)
    for _ in range(1, K):
        j = int(np.argmax(dmin))
        idx.append(j)
        dmin = np.minimum(dmin, np.sum((Z - Z[j]) ** 2, axis=1))
    return Z[idx].copy()


def _kmeanspp_centers(Z: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    centers = [Z[rng.integers(len(Z))]]
    dmin = np.sum((Z - centers[0]) ** 2, axis=1)
    for _ in range(1, K):
        total = dmin.sum()
        j = int(rng.choice(len(Z), p=dmin / total)) if total > 0 else int(rng.integers(len(Z)))
        centers.append(Z[j])
        dmin = np.minimum(dmin, np.sum((Z - Z[j]) ** 2, axis=1))
    return np.array(centers)


def _lloyd(Z: np.ndarray, centers: np.ndarray, n_iter: int) -> np.ndarray:
    labels = np.zeros(len(Z), dtype=int)
    for _ in range(n_iter):
        dist = np.sum((Z[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new = np.argmin(dist, axis=1)
        if _ > 0 and np.array_equal(new, labels):
            break
        labels = new
        for k in range(len(centers)):
            members = Z[labels == k]
            if len(members):
                centers[k] = members.mean(axis=0)
    return labels


def _wrap(a):
    return a - 2.0 * np.pi * np.ceil((a - np.pi) / (2.0 * np.pi))


def _m_step(X, resp, prev, min_var, angle_dims=()):
    N, P, d = X.shape
    K = resp.shape[1]
    nk = resp.sum(axis=0)
    priors = nk / N
    means = np.empty((K, P, d)) if prev is None else prev[1].copy()
    covs = np.empty((K, P, d, d)) if prev is None else prev[2].copy()
    for k in range(K):
        if nk[k] < 1e-10:
            if prev is None:
                means[k] = X.mean(axis=0)
                for p in range(P):
                    covs[k, p] = regularize(floor_eigenvalues(np.cov(X[:, p].T, bias=True).reshape(d, d), min_var))
            priors[k] = 0.0
            continue
        w = resp[:, k]
        for p in range(P):
            mu = w @ X[:, p] / nk[k]
            for i in angle_dims:
                mu[i] = np.arctan2(w @ np.sin(X[:, p, i]), w @ np.cos(X[:, p, i]))
            diff = X[:, p] - mu
            for i in angle_dims:
                diff[:, i] = _wrap(diff[:, i])
            cov = (w[:, None] * diff).T @ diff / nk[k]
            for i in angle_dims:
                # wrapped-normal spread; near-uniform angles become uninformative
                R = np.hypot(w @ np.sin(X[:, p, i]), w @ np.cos(X[:, p, i])) / nk[k]
                spread = -2.0 * np.log(max(R, 1e-300))
                uniform = spread > UNIFORM_ANGLE_VAR or rayleigh_pvalue(R, nk[k]) > UNIFORM_ALPHA
                cov[i, i] = MAX_ANGLE_VAR if uniform else max(cov[i, i], spread)
            means[k, p] = mu
            covs[k, p] = regularize(floor_eigenvalues(cov, min_var))
    priors = priors / priors.sum()
    return priors, means, covs


def _e_step(X, params, angle_dims=()):
    priors, means, covs = params
    N, P, d = X.shape
    K = len(priors)
    angle_dims = tuple(angle_dims)
    logp = np.zeros((N, K))
    with np.errstate(divide="ignore"):
        logp += np.log(priors)[None, :]
    for k in range(K):
        if priors[k] == 0:
            continue
        for p in range(P):
            chol = np.linalg.cholesky(covs[k, p])
            Xp = np.array(X[:, p])
            for i in angle_dims:
                Xp[:, i] = means[k, p, i] + _wrap(Xp[:, i] - means[k, p, i])
            logp[:, k] += _kernels.mvn_logpdf(Xp, means[k, p], chol)
    norm = logsumexp(logp, axis=1)
    resp = np.exp(logp - norm[:, None])
    return float(norm.sum()), resp


def _run_em(X, labels, K, config, angle_dims=()):
    resp = np.zeros((len(X), K))
    resp[np.arange(len(X)), labels] = 1.0
    params = _m_step(X, resp, None, config.min_var, angle_dims)
    history = []
    best = (-np.inf, params)
    converged = False
    for it in range(config.max_iter):
        ll, resp = _e_step(X, params, angle_dims)
        history.append(ll)
        if ll > best[0]:
            best = (ll, params)
        if it > 0 and abs(ll - history[-2]) < config.tol:
            converged = True
            break
        params = _m_step(X, resp, params, config.min_var, angle_dims)
    return best[1], history, converged


def fit_em(data, K: int, config: EMConfig | None = None, angle_dims=(), init_labels=None) -> TPGMM:
    """Fit a TP-GMM by EM with responsibilities shared across frames.

    ``data`` is an array ``(N, P, d)`` or a list of FrameObservation.
    The first initialization is a deterministic farthest-point seeding
    followed by Lloyd iterations; ``config.n_init > 1`` adds seeded
    k-means++ restarts and keeps the run with the highest likelihood. Each
    restart is tried both Lloyd-refined and as a raw nearest-center
    assignment, since Lloyd merges tight clusters into broad ones.
    ``init_labels`` (one integer in ``[0, K)`` per datum) replaces all of
    these with a single hard initial assignment.
    """
    config = config or EMConfig()
    X = _as_data(data)
    N, P, d = X.shape
    if K < 1:
        raise ValueError("K must be positive")
    if K > N:
        raise ValueError(f"K={K} exceeds the number of observations ({N})")
    Z = X.reshape(N, P * d)
    if init_labels is not None:
        init_labels = np.asarray(init_labels, dtype=int)
        if init_labels.shape != (N,) or np.any(init_labels < 0) or np.any(init_labels >= K):
            raise ValueError("init_labels needs one label in [0, K) per observation")
        label_sets = [init_labels]
    else:
        rng = np.random.default_rng(config.seed)
        label_sets = [_lloyd(Z, _farthest_point_centers(Z, K), config.kmeans_iter)]
        for _ in range(1, config.n_init):
            c = _kmeanspp_centers(Z, K, rng)
            label_sets += [_lloyd(Z, c.copy(), config.kmeans_iter), _lloyd(Z, c, 1)]
    best = None
    for labels in label_sets:
        params, history, converged = _run_em(X, labels, K, config, angle_dims)
        top = max(history)
        if best is None or top > best[0] + 1e-12:
            best = (top, params, history, converged)
    _, (priors, means, covs), history, converged = best
    return TPGMM(priors, means, covs, angle_dims, tuple(history), converged)


def fit_labeled(data, labels, K: int, min_var: float = 0.0, angle_dims=()) -> TPGMM:
    """Maximum-likelihood TP-GMM for a known hard assignment (a single M-step)."""
    X = _as_data(data)
    labels = np.asarray(labels, dtype=int)
    if labels.shape != (len(X),) or np.any(labels < 0) or np.any(labels >= K):
        raise ValueError("labels need one value in [0, K) per observation")
    if np.any(np.bincount(labels, minlength=K) == 0):
        raise ValueError("every component needs at least one observation")
    resp = np.zeros((len(X), K))
    resp[np.arange(len(X)), labels] = 1.0
    priors, means, covs = _m_step(X, resp, None, min_var, angle_dims)
    ll = _e_step(X, (priors, means, covs), angle_dims)[0]
    return TPGMM(priors, means, covs, angle_dims, (ll,), True)


def log_likelihood(m: TPGMM, data) -> float:
    """Joint data log-likelihood under the frame-product responsibility model."""
    return _e_step(_as_data(data), (m.priors, m.means, m.covs), m.angle_dims)[0]


def peak_log_likelihood(m: TPGMM) -> float:
    """Largest possible joint log-likelihood: a datum sitting on every frame mean of one component."""
    _, logdet = np.linalg.slogdet(m.covs)
    with np.errstate(divide="ignore"):
        per_k = np.log(m.priors) - 0.5 * np.sum(logdet + m.dim * np.log(2 * np.pi), axis=1)
    return float(np.max(per_k))


def frames_to_arrays(frames) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(frames, tuple) and len(frames) == 2 and isinstance(frames[0], np.ndarray):
        return frames
    As = np.stack([f.A for f in frames])
    bs = np.stack([f.b for f in frames])
    return As, bs


def instantiate(m: TPGMM, frames, precision_scale: float = 1.0) -> GMM:
    """Product over frames of the affine-transformed component Gaussians.

    ``frames`` is a list of P Frame objects, or a pre-stacked ``(As, bs)``
    pair. Weights are ``pi_k * exp(log_scale_k)`` renormalized, which keeps
    components whose frames agree. ``precision_scale`` multiplies every
    frame precision before the product (1.0 is the plain product).
    """
    As, bs = frames_to_arrays(frames)
    if As.shape[0] != m.n_frames:
        raise ValueError(f"expected {m.n_frames} frames, got {As.shape[0]}")
    mask = np.zeros(m.dim, dtype=np.bool_)
    mask[list(m.angle_dims)] = True
    mu, cov, ls = _kernels.instantiate_products(
        m.means, m.covs, np.ascontiguousarray(As), np.ascontiguousarray(bs), mask, float(precision_scale))
    with np.errstate(divide="ignore"):
        logw = np.log(m.priors) + ls
    if not np.any(np.isfinite(logw)):
        logw = np.log(np.maximum(m.priors, 1e-300))
    w = np.exp(logw - logsumexp(logw))
    w /= w.sum()
    return GMM(w, mu, cov, m.angle_dims)
