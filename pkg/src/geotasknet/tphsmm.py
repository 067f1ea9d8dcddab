"""Task-parameterized hidden semi-Markov trajectory models.

Emissions are a TP-GMM; each component additionally carries a Gaussian
duration (in steps) and the chain has no self-transitions, since dwell time
is carried by the durations.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solveh_banded
from scipy.special import logsumexp
from scipy.stats import norm

from . import _kernels
from .geometry import wrap
from .tpgmm import GMM, EMConfig, TPGMM, _e_step, fit_em, instantiate

LAPLACE_ALPHA = 1e-3
SIGMA_FLOOR = 0.5


@dataclass(frozen=True, eq=False)
class TPHSMM:
    trans: np.ndarray  # (K, K), zero diagonal when K > 1
    durations: np.ndarray  # (K, 2): mean, std in steps
    emission: TPGMM
    initial: np.ndarray  # (K,)

    def __post_init__(self):
        trans = np.asarray(self.trans, dtype=float)
        dur = np.asarray(self.durations, dtype=float)
        init = np.asarray(self.initial, dtype=float)
        K = self.emission.n_components
        if trans.shape != (K, K) or dur.shape != (K, 2) or init.shape != (K,):
            raise ValueError("HSMM parameter shapes do not match the component count")
        if not np.allclose(trans.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("transition rows must sum to one")
        if np.any(dur[:, 1] <= 0):
            raise ValueError("duration standard deviations must be positive")
        object.__setattr__(self, "trans", trans)
        object.__setattr__(self, "durations", dur)
        object.__setattr__(self, "initial", init)

    @property
    def n_components(self) -> int:
        return self.emission.n_components

    def instantiate(self, frames) -> "HSMM":
        return HSMM(instantiate(self.emission, frames), self.trans, self.durations, self.initial)


@dataclass(frozen=True, eq=False)
class HSMM:
    """An HSMM whose emissions are a plain GMM (a TPHSMM given frames)."""

    emission: GMM
    trans: np.ndarray
    durations: np.ndarray
    initial: np.ndarray

    @property
    def n_components(self) -> int:
        return self.emission.n_components


@dataclass(frozen=True)
class ComponentSchedule:
    segments: tuple  # ((component, duration), ...)

    def __post_init__(self):
        segs = tuple((int(k), int(d)) for k, d in self.segments)
        if any(d < 1 for _, d in segs):
            raise ValueError("durations must be at least one step")
        object.__setattr__(self, "segments", segs)

    @property
    def horizon(self) -> int:
        return sum(d for _, d in self.segments)

    def per_step(self) -> np.ndarray:
        return np.concatenate([np.full(d, k, dtype=int) for k, d in self.segments])


def _run_lengths(labels):
    runs = []
    start = 0
    for t in range(1, len(labels) + 1):
        if t == len(labels) or labels[t] != labels[start]:
            runs.append((int(labels[start]), t - start))
            start = t
    return runs


def fit_hsmm(sequences, K: int, config: EMConfig | None = None, angle_dims=()) -> TPHSMM:
    """Learn a TP-HSMM from framed demonstrations.

    ``sequences`` is a list of arrays shaped ``(T_m, P, d)``: each timestep of
    a demonstration observed from the demonstration's P frames.
    """
    config = config or EMConfig()
    seqs = [np.asarray(s, dtype=float) for s in sequences]
    if not seqs:
        raise ValueError("at least one demonstration is required")
    shapes = {s.shape[1:] for s in seqs}
    if len(shapes) != 1:
        raise ValueError("demonstrations disagree on frame count or dimension")
    total = sum(len(s) for s in seqs)
    if K > total:
        raise ValueError(f"K={K} exceeds the total number of timesteps ({total})")
    X = np.concatenate(seqs)
    emission = fit_em(X, K, config, angle_dims)

    counts = np.zeros((K, K))
    starts = np.zeros(K)
    runs = [[] for _ in range(K)]
    offset = 0
    for s in seqs:
        labels = _assign(emission, X[offset:offset + len(s)])
        offset += len(s)
        segs = _run_lengths(labels)
        starts[segs[0][0]] += 1
        for (k, d) in segs:
            runs[k].append(d)
        for (h, _), (k, _) in zip(segs[:-1], segs[1:]):
            counts[h, k] += 1

    if K == 1:
        trans = np.ones((1, 1))
    else:
        trans = counts + LAPLACE_ALPHA
        np.fill_diagonal(trans, 0.0)
        trans /= trans.sum(axis=1, keepdims=True)
    durations = np.empty((K, 2))
    for k in range(K):
        if runs[k]:
            durations[k] = (np.mean(runs[k]), max(np.std(runs[k]), SIGMA_FLOOR))
        else:
            durations[k] = (1.0, SIGMA_FLOOR)
    initial = (starts + LAPLACE_ALPHA) / (starts + LAPLACE_ALPHA).sum()
    return TPHSMM(trans, durations, emission, initial)


def _assign(emission: TPGMM, X: np.ndarray) -> np.ndarray:
    _, resp = _e_step(X, (emission.priors, emission.means, emission.covs), emission.angle_dims)
    return np.argmax(resp, axis=1)


def duration_table(durations: np.ndarray, T: int) -> np.ndarray:
    """Log duration probabilities ``(K, T)``, normalized over each component's support.

    Support is ``1..ceil(mu + 4 sigma)`` capped at T; a single-component model
    may dwell for the whole horizon.
    """
    K = len(durations)
    table = np.full((K, T), -np.inf)
    steps = np.arange(1, T + 1)
    for k, (mu, sd) in enumerate(durations):
        dmax = T if K == 1 else int(min(T, max(1, np.ceil(mu + 4 * sd))))
        lp = norm.logpdf(steps[:dmax], mu, sd)
        table[k, :dmax] = lp - logsumexp(lp)
    return table


def emission_table(model: HSMM, prefix, T: int) -> np.ndarray:
    """Cumulative log emissions ``(T + 1, K)``; unobserved steps add zero."""
    K = model.n_components
    E = np.zeros((T, K))
    for t, x in enumerate(list(prefix)[:T]):
        E[t] = model.emission.component_logpdf(np.asarray(x, dtype=float))
    cum = np.zeros((T + 1, K))
    cum[1:] = np.cumsum(E, axis=0)
    return cum


def _log_chain(model: HSMM) -> tuple:
    """Log initial and transition probabilities; a segment never repeats its component."""
    with np.errstate(divide="ignore"):
        log_init = np.log(model.initial)
        log_trans = np.log(model.trans)
    np.fill_diagonal(log_trans, -np.inf)
    return log_init, log_trans


def path_score(model: HSMM, schedule: ComponentSchedule, prefix=()) -> float:
    """Log score of a schedule under the same terms the Viterbi DP maximizes."""
    T = schedule.horizon
    dur = duration_table(model.durations, T)
    cum = emission_table(model, prefix, T)
    log_init, log_trans = _log_chain(model)
    score = 0.0
    t = 0
    prev = None
    for k, d in schedule.segments:
        score += log_init[k] if prev is None else log_trans[prev, k]
        score += dur[k, d - 1]
        score += cum[t + d, k] - cum[t, k]
        t += d
        prev = k
    return float(score)


def viterbi(model: HSMM, observed_prefix=(), T: int = 1) -> ComponentSchedule:
    """Most likely component/duration schedule over a horizon of T steps.

    Ties resolve toward the lowest predecessor index, the shortest duration
    and the lowest final component.
    """
    if T < 1:
        raise ValueError("horizon must be at least one step")
    dur = duration_table(model.durations, T)
    cum = emission_table(model, observed_prefix, T)
    log_init, log_trans = _log_chain(model)
    delta, back_d, back_h = _kernels.hsmm_viterbi(
        np.ascontiguousarray(log_init), np.ascontiguousarray(log_trans), dur, cum)
    k = int(np.argmax(delta[T]))
    if not np.isfinite(delta[T, k]):
        raise ValueError("no feasible schedule for this horizon")
    segs = []
    t = T
    while t > 0:
        d = int(back_d[t, k])
        h = int(back_h[t, k])
        segs.append((k, d))
        t -= d
        k = h
    return ComponentSchedule(tuple(reversed(segs)))


def retrieve_trajectory(model: HSMM, schedule: ComponentSchedule, start, smoothness: float = 0.0,
                        angle_dims=()) -> np.ndarray:
    """Batch quadratic tracker over the scheduled Gaussians.

    Minimizes ``sum_t (x_t - mu_t)' S_t^-1 (x_t - mu_t) + lam * sum_t |x_{t+1} - x_t|^2``
    with ``x_1 = start``; returns an array ``(T, d)``.
    """
    start = np.asarray(start, dtype=float)
    d = model.emission.dim
    if start.shape != (d,):
        raise ValueError("start dimension does not match the emissions")
    ks = schedule.per_step()
    T = len(ks)
    if T <= 1:
        return start[None, :].copy()
    mus = model.emission.means[ks[1:]].copy()
    prev = start
    for t in range(len(mus)):
        for i in angle_dims:
            mus[t, i] = prev[i] + wrap(mus[t, i] - prev[i])
        prev = mus[t]
    precs = np.linalg.inv(model.emission.covs[ks[1:]])
    lam = float(smoothness)
    n = T - 1
    H = precs.copy()
    rhs = np.einsum("tij,tj->ti", precs, mus)
    if lam > 0:
        eye = np.eye(d)
        for t in range(n):
            H[t] += (2.0 if t < n - 1 else 1.0) * lam * eye
        rhs[0] += lam * start
    ab = np.zeros((d + 1, n * d))
    for t in range(n):
        for i in range(d):
            for j in range(i, d):
                col = t * d + j
                ab[d + i - j, col] = H[t, i, j]
        if t < n - 1 and lam > 0:
            for i in range(d):
                col = (t + 1) * d + i
                ab[d + (t * d + i) - col, col] = -lam
    x = solveh_banded(ab, rhs.reshape(-1))
    out = np.vstack([start, x.reshape(n, d)])
    for i in angle_dims:
        out[:, i] = wrap(out[:, i])
    return out


def tracking_objective(model: HSMM, schedule: ComponentSchedule, X, smoothness: float) -> float:
    ks = schedule.per_step()
    X = np.asarray(X, dtype=float)
    total = 0.0
    for t in range(1, len(ks)):
        diff = X[t] - model.emission.means[ks[t]]
        total += diff @ np.linalg.solve(model.emission.covs[ks[t]], diff)
    total += smoothness * np.sum(np.diff(X, axis=0) ** 2)
    return float(total)
