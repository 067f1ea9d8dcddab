"""Geometric task networks: skill-transition graphs with goal-conditioned constraints.

Plans are wrapped in virtual start/end actions. Each transition ``(a, b)``
collects the states in which ``b`` was started, the parameters it used, and
the goal; per-edge TP-GMMs then describe where ``b``'s free parameters and
objects sit relative to the current scene and to the goal.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import ANGLE_DIMS, POSE_DIM, frame_arrays, to_local
from .skill import SkillModel
from .state import ROBOT, TABLE, PlanDataset, WorldState
from .tpgmm import TPGMM, EMConfig, fit_em, fit_labeled

START = "__start__"
END = "__end__"

GTN_MIN_STD = 0.02
SMALL_BUCKET = 3
SMALL_BUCKET_VAR = 0.25


@dataclass(frozen=True, eq=False)
class AugmentedState:
    state: WorldState
    params: dict
    goal: WorldState
    plan: tuple = ()  # discrete plan the sample came from
    position: int = 0  # index of the edge within that plan


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """Constraint models of one edge; ``frames`` lists frame keys per model.

    A frame key is ``("cur", entity)``, ``("goal", entity)`` or ``("tp", name)``.
    """

    skill: str
    objects: tuple
    free_params: tuple  # (name, anchor entity, free dims)
    # slices of one edge mixture: all models share priors and component order
    param_models: dict
    object_models: dict
    frames: dict  # model key ("param", name) / ("object", entity) -> tuple of frame keys

    def frame_poses(self, key, s: WorldState, goal: WorldState, tp: dict) -> list:
        out = []
        for kind, name in self.frames[key]:
            if kind == "cur":
                out.append(s.pose(name))
            elif kind == "goal":
                out.append(goal.pose(name))
            else:
                out.append(np.zeros(POSE_DIM) if name == TABLE and TABLE not in tp else tp[name])
        return out

    def frame_arrays(self, key, s, goal, tp) -> tuple:
        return frame_arrays(self.frame_poses(key, s, goal, tp))

    @property
    def n_mixture(self) -> int:
        """Components of the shared edge mixture."""
        return next(iter({**self.param_models, **self.object_models}.values())).n_components

    @property
    def n_components(self) -> int:
        models = list(self.param_models.values()) + list(self.object_models.values())
        return sum(m.n_components for m in models)


@dataclass
class GTN:
    nodes: tuple
    edges: tuple
    constraints: dict = field(default_factory=dict)  # edge -> ConstraintSet (edges into END have none)
    n_comp: dict = field(default_factory=dict)
    goal_entities: tuple = ()

    def __post_init__(self):
        nodes = set(self.nodes)
        for a, b in self.edges:
            if a not in nodes or b not in nodes:
                raise ValueError(f"edge {(a, b)} has an endpoint outside the node set")
        for e in self.edges:
            if self.n_comp.get(e, 0) < 1:
                raise ValueError(f"edge {e} needs a positive component count")
            if e[1] != END and e not in self.constraints:
                raise ValueError(f"edge {e} has no constraint set")

    def outgoing(self, node: str) -> list:
        return [e for e in self.edges if e[0] == node]

    def is_walk(self, discrete) -> bool:
        seq = [START] + list(discrete) + [END]
        edges = set(self.edges)
        return all((a, b) in edges for a, b in zip(seq[:-1], seq[1:]))

    @property
    def size(self) -> tuple:
        return len(self.nodes), len(self.edges), sum(cs.n_components for cs in self.constraints.values())


def _wrapped(discrete) -> list:
    return [START] + list(discrete) + [END]


def _edges_of(discrete) -> list:
    seq = _wrapped(discrete)
    return list(zip(seq[:-1], seq[1:]))


def _goal_of(plan):
    idx = plan.problem.satisfied_by(plan.final_state)
    return plan.problem.goals[idx if idx is not None else 0]


def collect_transitions(dataset: PlanDataset) -> tuple:
    """Edge list (first-seen order) and augmented states bucketed by edge."""
    if not dataset.plans:
        raise ValueError("the plan dataset is empty")
    edges, buckets = [], {}
    for plan in dataset.plans:
        goal = _goal_of(plan)
        for n, e in enumerate(_edges_of(plan.discrete())):
            if e not in buckets:
                buckets[e] = []
                edges.append(e)
            if n < len(plan.steps):
                step = plan.steps[n]
                buckets[e].append(AugmentedState(step.state, dict(step.params), goal, plan.discrete(), n))
            else:
                buckets[e].append(AugmentedState(plan.final_state, {}, goal, plan.discrete(), n))
    return edges, buckets


def n_components(dataset: PlanDataset, e) -> int:
    """Number of distinct discrete plans that contain edge ``e``."""
    e = tuple(e)
    shapes = {p.discrete() for p in dataset.plans if e in _edges_of(p.discrete())}
    if not shapes:
        raise KeyError(f"edge {e} does not occur in the dataset")
    return len(shapes)


def _goal_entities(dataset: PlanDataset) -> tuple:
    ents = set()
    for p in dataset.plans:
        ents.update(k for k, v in p.problem.goal_mask.items() if np.any(v))
    ents.discard(ROBOT)
    return tuple(sorted(ents))


def _features(X: np.ndarray) -> np.ndarray:
    """Per-sample features with angles on the unit circle."""
    parts = []
    for i in range(X.shape[2]):
        if i in ANGLE_DIMS:
            parts += [np.cos(X[:, :, i]), np.sin(X[:, :, i])]
        else:
            parts.append(X[:, :, i])
    return np.concatenate(parts, axis=1)


def _cluster_cost(F: np.ndarray) -> float:
    """Negative log-likelihood (up to constants) of rows under a floored diagonal Gaussian."""
    var = np.maximum(F.var(axis=0), GTN_MIN_STD ** 2)
    return 0.5 * len(F) * float(np.sum(np.log(var)))


def _group_labels(X: np.ndarray, bucket, K: int):
    """Initial EM labels from plan structure.

    Samples are grouped by (discrete plan, position of the edge in it). When
    there are more groups than components, the pair of clusters whose merge
    costs the least likelihood is merged until K remain, so groups that are
    tight in the same features end up together.
    """
    keys = {}
    groups = np.array([keys.setdefault((a.plan, a.position), len(keys)) for a in bucket])
    G = len(keys)
    if G < K:
        return None
    F = _features(X)
    clusters = [[j] for j in range(G)]
    members = lambda c: F[np.isin(groups, c)]
    cost = [_cluster_cost(members(c)) for c in clusters]
    while len(clusters) > K:
        best = None
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                delta = _cluster_cost(members(clusters[i] + clusters[j])) - cost[i] - cost[j]
                if best is None or delta < best[0] - 1e-12:
                    best = (delta, i, j)
        _, i, j = best
        clusters[i] = clusters[i] + clusters[j]
        cost[i] = _cluster_cost(members(clusters[i]))
        del clusters[j], cost[j]
    labels = np.empty(G, dtype=int)
    for k, c in enumerate(clusters):
        labels[c] = k
    return labels[groups]


def _fit(X: np.ndarray, K: int, seed: int, bucket=None, X_group=None) -> TPGMM:
    N, P, d = X.shape
    K = max(1, min(K, N))
    if N < SMALL_BUCKET:
        # too few samples for a covariance estimate: fixed broad Gaussians
        labels = np.arange(N) % K
        means = np.stack([X[labels == k].mean(axis=0) for k in range(K)])
        covs = np.broadcast_to(SMALL_BUCKET_VAR * np.eye(d), (K, P, d, d)).copy()
        priors = np.bincount(labels, minlength=K) / N
        return TPGMM(priors, means, covs, ANGLE_DIMS)
    labels = _group_labels(X if X_group is None else X_group, bucket, K) if bucket is not None else None
    if labels is not None:
        # plan structure already says which situation each sample belongs to
        return fit_labeled(X, labels, K, GTN_MIN_STD ** 2, ANGLE_DIMS)
    return fit_em(X, K, EMConfig(min_var=GTN_MIN_STD ** 2, n_init=3, seed=seed), ANGLE_DIMS)


def _framed(x, poses) -> np.ndarray:
    return np.stack([to_local(x, q) for q in poses])


def learn(dataset: PlanDataset, skills, seed: int = 0) -> GTN:
    """Build the graph and fit the per-edge constraint models."""
    skills = {m.name: m for m in skills} if not isinstance(skills, dict) else dict(skills)
    edges, buckets = collect_transitions(dataset)
    missing = sorted({b for _, b in edges if b != END and b not in skills})
    if missing:
        raise KeyError(f"no skill models for {missing}")
    goal_ents = _goal_entities(dataset)
    entity_set = sorted({e for p in dataset.plans for e in p.problem.start.entities} | {TABLE})
    entity_set = [ROBOT] + [e for e in entity_set if e != ROBOT]
    goal_keys = [("goal", e) for e in goal_ents]

    constraints, n_comp = {}, {}
    for idx, e in enumerate(edges):
        n_comp[e] = n_components(dataset, e)
        if e[1] == END:
            continue
        m: SkillModel = skills[e[1]]
        bucket = buckets[e]
        objects = tuple(m.objects)
        frames, blocks = {}, []
        for p in m.spec.free_params:
            key = ("param", p.name)
            frames[key] = tuple(("cur", x) for x in entity_set) + tuple(goal_keys)
            blocks.append((key, np.stack([_framed(a.params[p.name], _poses(frames[key], a)) for a in bucket])))
        for o in objects:
            key = ("object", o)
            tp_keys = tuple(("tp", p.name) for p in m.params if p.is_free or p.entity not in objects)
            frames[key] = tuple(("cur", x) for x in objects if x != o) + tp_keys + tuple(goal_keys)
            blocks.append((key, np.stack([_framed(a.state.pose(o), _poses(frames[key], a)) for a in bucket])))
        # one mixture over all frames of the edge, so component k means the same situation in every model;
        # situations are told apart by where the free parameters go when there are any
        X_all = np.concatenate([X for _, X in blocks], axis=1)
        X_free = [X for key, X in blocks if key[0] == "param"]
        joint = _fit(X_all, n_comp[e], seed + idx, bucket, np.concatenate(X_free, axis=1) if X_free else None)
        param_models, object_models, start = {}, {}, 0
        for key, X in blocks:
            sl = slice(start, start + X.shape[1])
            start += X.shape[1]
            part = TPGMM(joint.priors, joint.means[:, sl], joint.covs[:, sl], joint.angle_dims)
            (param_models if key[0] == "param" else object_models)[key[1]] = part
        free = tuple((p.name, p.entity, p.free_dims) for p in m.spec.free_params)
        constraints[e] = ConstraintSet(m.name, objects, free, param_models, object_models, frames)

    nodes = [START] + sorted({n for e in edges for n in e} - {START, END}) + [END]
    return GTN(tuple(nodes), tuple(edges), constraints, n_comp, goal_ents)


def _poses(keys, a: AugmentedState) -> list:
    out = []
    for kind, name in keys:
        if kind == "cur":
            out.append(a.state.pose(name))
        elif kind == "goal":
            out.append(a.goal.pose(name))
        else:
            out.append(np.zeros(POSE_DIM) if name == TABLE and TABLE not in a.params else a.params[name])
    return out
