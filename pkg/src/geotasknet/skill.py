"""Skill models: trajectory TP-HSMM, precondition and effect TP-GMMs, task parameters.

Every entity state and every task parameter is a planar pose ``(x, y, yaw, c)``.
A bound parameter takes the current pose of its entity; a free parameter
starts from the current pose of its anchor entity and replaces ``free_dims``
with values chosen by the planner or executor.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .geometry import ANGLE_DIMS, POSE_DIM, YAW, frame_arrays, normalize_pose, to_local
from .state import ROBOT, TABLE, Demonstration, WorldState
from .tpgmm import GMM, TPGMM, EMConfig, fit_em, instantiate, log_likelihood, mode, peak_log_likelihood
from .tphsmm import TPHSMM, fit_hsmm

SKILL_EM = EMConfig(min_var=1e-6)
PRIOR_EM = EMConfig(min_var=1e-6, n_init=8)
STATIC_TOL = 1e-12


@dataclass(frozen=True)
class TaskParamSpec:
    name: str
    entity: str
    free_dims: tuple = ()
    prior_components: int = 1

    def __post_init__(self):
        dims = tuple(sorted(int(i) for i in self.free_dims))
        if any(not 0 <= i < POSE_DIM for i in dims) or len(set(dims)) != len(dims):
            raise ValueError(f"invalid free dimensions {self.free_dims!r} for parameter {self.name!r}")
        object.__setattr__(self, "free_dims", dims)

    @property
    def is_free(self) -> bool:
        return bool(self.free_dims)

    @property
    def free_angle_dims(self) -> tuple:
        return tuple(j for j, i in enumerate(self.free_dims) if i in ANGLE_DIMS)

    def pose(self, s: WorldState, values=None) -> np.ndarray:
        p = s.pose(self.entity)
        if self.is_free:
            if values is None:
                raise ValueError(f"free parameter {self.name!r} needs values")
            p[list(self.free_dims)] = np.asarray(values, dtype=float)
        return normalize_pose(p)

    def to_dict(self) -> dict:
        return {"name": self.name, "entity": self.entity, "free_dims": list(self.free_dims),
                "prior_components": self.prior_components}

    @classmethod
    def from_dict(cls, d: dict) -> "TaskParamSpec":
        return cls(d["name"], d["entity"], tuple(d.get("free_dims", ())), d.get("prior_components", 1))


@dataclass(frozen=True)
class SkillSpec:
    """Skill metadata needed for learning."""

    name: str
    objects: tuple
    params: tuple
    n_states: int = 3

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "params", tuple(self.params))
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate task parameter names in skill {self.name!r}")
        if not self.params:
            raise ValueError(f"skill {self.name!r} has no task parameters")

    @property
    def modeled_entities(self) -> tuple:
        return (ROBOT,) + tuple(o for o in self.objects if o != ROBOT)

    @property
    def free_params(self) -> tuple:
        return tuple(p for p in self.params if p.is_free)

    @property
    def bound_params(self) -> tuple:
        return tuple(p for p in self.params if not p.is_free)

    def precondition_params(self, entity: str) -> tuple:
        """Bound parameters that frame the precondition of ``entity`` (its own frame excluded)."""
        names = tuple(p.name for p in self.bound_params if p.entity != entity)
        return names if names else (TABLE,)

    def to_dict(self) -> dict:
        return {"name": self.name, "objects": list(self.objects), "params": [p.to_dict() for p in self.params],
                "n_states": self.n_states}

    @classmethod
    def from_dict(cls, d: dict) -> "SkillSpec":
        return cls(d["name"], tuple(d["objects"]), tuple(TaskParamSpec.from_dict(p) for p in d["params"]),
                   d.get("n_states", 3))


def _param_pose(tp: dict, name: str) -> np.ndarray:
    if name == TABLE and TABLE not in tp:
        return np.zeros(POSE_DIM)
    return tp[name]


def _frames(tp: dict, names) -> tuple:
    return frame_arrays([_param_pose(tp, n) for n in names])


@dataclass(frozen=True, eq=False)
class SkillModel:
    spec: SkillSpec
    trajectory: TPHSMM
    precondition: dict  # entity -> TPGMM framed by spec.precondition_params(entity)
    effect: dict  # entity -> TPGMM framed by every task parameter
    param_priors: dict = field(default_factory=dict)  # free param -> world-frame TPGMM over free dims
    static: tuple = ()  # entities that no demonstration moved

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def objects(self) -> tuple:
        return self.spec.objects

    @property
    def params(self) -> tuple:
        return self.spec.params

    @cached_property
    def _prior_gmms(self) -> dict:
        out = {}
        for p in self.spec.free_params:
            m = self.param_priors[p.name]
            out[p.name] = instantiate(m, (np.eye(m.dim)[None], np.zeros((1, m.dim))))
        return out

    def prior_gmm(self, name: str) -> GMM:
        return self._prior_gmms[name]


def demo_params(spec: SkillSpec, demo: Demonstration) -> dict:
    """Task parameters of a demonstration: bound from its first state, free as recorded."""
    s0 = demo.state_at(0)
    tp = {}
    for p in spec.params:
        if p.is_free:
            if p.name not in demo.free_params:
                raise ValueError(f"demonstration of {spec.name!r} lacks free parameter {p.name!r}")
            tp[p.name] = normalize_pose(demo.free_params[p.name])
        else:
            tp[p.name] = s0.pose(p.entity)
    return tp


def _framed(x, poses) -> np.ndarray:
    return np.stack([to_local(x, q) for q in poses])


def _neighbourhood_labels(Z: np.ndarray, i: int, K: int) -> np.ndarray:
    """Datum ``i`` and its nearest neighbours form component 0; the rest are split by distance rank."""
    order = np.argsort(np.sum((Z - Z[i]) ** 2, axis=1), kind="stable")
    labels = np.empty(len(Z), dtype=int)
    labels[order] = np.minimum(np.arange(len(Z)) * K // len(Z), K - 1)
    return labels


def _fit_prior(V: np.ndarray, K: int, angle_dims) -> TPGMM:
    """Free-parameter prior by maximum likelihood over several initializations.

    Demonstrated targets often mix a tight region with a broad one, and
    k-means style seeding tends to merge the tight region into a broad
    component. Seeding one component at each datum's neighbourhood finds it.
    """
    best = fit_em(V, K, PRIOR_EM, angle_dims)
    if K == 1:
        return best
    Z = V.reshape(len(V), -1)
    for i in range(len(V)):
        m = fit_em(V, K, SKILL_EM, angle_dims, _neighbourhood_labels(Z, i, K))
        if m.log_likelihoods[-1] > best.log_likelihoods[-1] + 1e-9:
            best = m
    return best


def learn_skill(demos, spec: SkillSpec, K: int | None = None) -> SkillModel:
    """Learn trajectory, precondition, effect and free-parameter prior models."""
    demos = list(demos)
    if not demos:
        raise ValueError(f"no demonstrations for skill {spec.name!r}")
    ents = demos[0].entities
    if any(d.entities != ents for d in demos):
        raise ValueError(f"demonstrations of {spec.name!r} disagree on their entity sets")
    missing = [e for e in spec.modeled_entities if e not in ents]
    if missing:
        raise ValueError(f"demonstrations of {spec.name!r} lack entities {missing}")
    K = spec.n_states if K is None else K
    tps = [demo_params(spec, d) for d in demos]
    names = [p.name for p in spec.params]

    seqs = []
    for d, tp in zip(demos, tps):
        poses = [tp[n] for n in names]
        seqs.append(np.stack([_framed(x, poses) for x in d.track(ROBOT)]))
    K_traj = min(K, sum(len(s) for s in seqs))
    trajectory = fit_hsmm(seqs, K_traj, SKILL_EM, ANGLE_DIMS)

    precondition, effect = {}, {}
    for e in spec.modeled_entities:
        pre_names = spec.precondition_params(e)
        X = np.stack([_framed(d.track(e)[0], [_param_pose(tp, n) for n in pre_names]) for d, tp in zip(demos, tps)])
        precondition[e] = fit_em(X, 1, SKILL_EM, ANGLE_DIMS)
        Y = np.stack([_framed(d.track(e)[-1], [tp[n] for n in names]) for d, tp in zip(demos, tps)])
        effect[e] = fit_em(Y, 1, SKILL_EM, ANGLE_DIMS)

    static = tuple(e for e in spec.modeled_entities
                   if all(np.max(np.abs(d.track(e) - d.track(e)[0])) <= STATIC_TOL for d in demos))
    priors = {}
    for p in spec.free_params:
        V = np.stack([tp[p.name][list(p.free_dims)] for tp in tps])[:, None, :]
        priors[p.name] = _fit_prior(V, min(p.prior_components, len(V)), p.free_angle_dims)
    return SkillModel(spec, trajectory, precondition, effect, priors, static)


def bound_params(m: SkillModel, s: WorldState) -> dict:
    return {p.name: s.pose(p.entity) for p in m.spec.bound_params}


def complete_params(m: SkillModel, s: WorldState, free_values: dict) -> dict:
    """Bound params from ``s`` plus free params anchored on ``s`` with the given values."""
    tp = bound_params(m, s)
    for p in m.spec.free_params:
        tp[p.name] = p.pose(s, free_values[p.name])
    return tp


def _check_params(m: SkillModel, tp: dict, bound_only: bool = False):
    specs = m.spec.bound_params if bound_only else m.params
    missing = [p.name for p in specs if p.name not in tp]
    if missing:
        raise ValueError(f"task parameters {missing} missing for skill {m.name!r}")


def precondition_gmm(m: SkillModel, entity: str, tp: dict, precision_scale: float = 1.0) -> GMM:
    return instantiate(m.precondition[entity], _frames(tp, m.spec.precondition_params(entity)), precision_scale)


def effect_gmm(m: SkillModel, entity: str, tp: dict) -> GMM:
    return instantiate(m.effect[entity], _frames(tp, [p.name for p in m.params]))


def apply_effect(m: SkillModel, s: WorldState, tp: dict) -> WorldState:
    """Predicted state after executing ``m``: each modeled entity moves to its effect mode.

    Entities that stayed put in every demonstration are left exactly where they are.
    """
    _check_params(m, tp)
    for e in m.spec.modeled_entities:
        s.pose(e)  # raises on a missing entity
    out = s
    for e in m.spec.modeled_entities:
        if e in m.static:
            continue
        out = out.with_pose(e, normalize_pose(mode(effect_gmm(m, e, tp))))
    return out


def precondition_loglik(m: SkillModel, s: WorldState, tp: dict) -> float:
    """Sum over modeled entities of the joint log-likelihood of the entity seen from its precondition frames.

    This is the instantiated product density with the product normalizer
    kept, so frames that disagree with each other lower the value even when
    the entity sits at the product mean.
    """
    _check_params(m, tp, bound_only=True)
    total = 0.0
    for e in m.spec.modeled_entities:
        poses = [_param_pose(tp, n) for n in m.spec.precondition_params(e)]
        total += log_likelihood(m.precondition[e], _framed(s.pose(e), poses)[None])
    return float(total)


def precondition_mode_loglik(m: SkillModel, tp: dict | None = None) -> float:
    """The value :func:`precondition_loglik` takes when every entity agrees with every frame mean."""
    return float(sum(peak_log_likelihood(m.precondition[e]) for e in m.spec.modeled_entities))


def sample_free_values(m: SkillModel, n: int, rng: np.random.Generator) -> dict:
    """Candidate values per free parameter: prior component means first, then draws."""
    if n < 1:
        raise ValueError("n must be at least 1")
    out = {}
    for p in m.spec.free_params:
        g = m.prior_gmm(p.name)
        vals = [mu.copy() for mu in g.means[:n]]
        if n > len(vals):
            vals.extend(g.sample(n - len(vals), rng))
        for v in vals:
            for j in p.free_angle_dims:
                v[j] = normalize_pose(np.r_[0, 0, v[j], 0])[YAW]
        out[p.name] = vals
    return out


def sample_free_params(m: SkillModel, s: WorldState, n: int, rng_seed) -> list:
    """Task-parameter candidates for ``m`` at ``s``.

    Skills without free parameters yield a single set of bound parameters.
    With free parameters the candidates are the cartesian product of each
    parameter's values (prior means followed by mixture draws).
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    if not m.spec.free_params:
        if n < 1:
            raise ValueError("n must be at least 1")
        return [bound_params(m, s)]
    values = sample_free_values(m, n, rng)
    combos = [{}]
    for p in m.spec.free_params:
        combos = [dict(c, **{p.name: v}) for c in combos for v in values[p.name]]
    return [complete_params(m, s, c) for c in combos]
