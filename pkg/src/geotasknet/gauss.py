"""Multivariate Gaussians, affine frames, and Gaussian products."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import _kernels

SYM_ATOL = 1e-9
MIN_EIG = 1e-9


def regularize(cov: np.ndarray) -> np.ndarray:
    """Add a ridge when the smallest eigenvalue drops below ``MIN_EIG``.

    The ridge is ``1e-6 * trace / d``, with an absolute floor so that an
    all-zero scatter matrix still becomes positive definite.
    """
    cov = 0.5 * (cov + cov.T)
    d = cov.shape[0]
    if np.linalg.eigvalsh(cov)[0] < MIN_EIG:
        eps = max(1e-6 * np.trace(cov) / d, 10 * MIN_EIG)
        cov = cov + eps * np.eye(d)
    return cov


def floor_eigenvalues(cov: np.ndarray, min_var: float) -> np.ndarray:
    """Clip eigenvalues from below (the constrained covariance MLE)."""
    if min_var <= 0:
        return cov
    w, V = np.linalg.eigh(0.5 * (cov + cov.T))
    if w[0] >= min_var:
        return cov
    w = np.maximum(w, min_var)
    return (V * w) @ V.T


@dataclass(frozen=True, eq=False)
class Gaussian:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        d = mean.shape[0]
        if mean.ndim != 1 or cov.shape != (d, d):
            raise ValueError(f"covariance shape {cov.shape} does not match mean dimension {d}")
        if not np.allclose(cov, cov.T, atol=SYM_ATOL, rtol=0.0):
            raise ValueError("covariance is not symmetric")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance is not positive definite") from exc
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @cached_property
    def chol(self) -> np.ndarray:
        return np.linalg.cholesky(self.cov)

    @cached_property
    def precision(self) -> np.ndarray:
        return np.linalg.inv(self.cov)

    def log_pdf(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"expected a vector of dimension {self.dim}, got shape {x.shape}")
        return float(_kernels.mvn_logpdf(x[None, :], self.mean, self.chol)[0])

    def log_pdf_many(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise ValueError(f"expected vectors of dimension {self.dim}")
        return _kernels.mvn_logpdf(np.ascontiguousarray(X), self.mean, self.chol)

    def pdf(self, x) -> float:
        return float(np.exp(self.log_pdf(x)))


@dataclass(frozen=True, eq=False)
class Frame:
    """Affine frame ``x_global = A @ x_local + b``."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if A.shape != (b.shape[0], b.shape[0]):
            raise ValueError("frame matrix and offset dimensions differ")
        if abs(np.linalg.det(A)) <= 1e-12:
            raise ValueError("frame matrix is singular")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @classmethod
    def identity(cls, d: int) -> "Frame":
        return cls(np.eye(d), np.zeros(d))

    def inverse(self) -> "Frame":
        Ainv = np.linalg.inv(self.A)
        return Frame(Ainv, -Ainv @ self.b)

    def to_global(self, x) -> np.ndarray:
        return self.A @ np.asarray(x, dtype=float) + self.b

    def to_local(self, x) -> np.ndarray:
        return np.linalg.solve(self.A, np.asarray(x, dtype=float) - self.b)


def pdf(g: Gaussian, x) -> float:
    return g.pdf(x)


def log_pdf(g: Gaussian, x) -> float:
    return g.log_pdf(x)


def affine_transform(g: Gaussian, f: Frame) -> Gaussian:
    if f.A.shape[0] != g.dim:
        raise ValueError("frame and Gaussian dimensions differ")
    cov = f.A @ g.cov @ f.A.T
    return Gaussian(f.A @ g.mean + f.b, 0.5 * (cov + cov.T))


def product(gs) -> tuple[Gaussian, float]:
    """Normalized product of Gaussians plus the log of the dropped constant.

    ``prod_p N(x; mu_p, S_p) == exp(log_scale) * N(x; mu, S)`` for every x.
    """
    gs = list(gs)
    if not gs:
        raise ValueError("product of an empty list")
    d = gs[0].dim
    if any(g.dim != d for g in gs):
        raise ValueError("all Gaussians must share a dimension")
    if len(gs) == 1:
        return gs[0], 0.0
    means = np.stack([g.mean for g in gs])
    covs = np.stack([g.cov for g in gs])
    lam = sum(g.precision for g in gs)
    if np.linalg.eigvalsh(0.5 * (lam + lam.T))[0] <= 0:
        raise ValueError("summed precision is singular")
    mean, cov, log_scale = _kernels.gauss_product(means, covs, 1.0)
    return Gaussian(mean, cov), float(log_scale)
