"""Online execution of a learned task network.

At every step the executor scores the outgoing edges of the current node,
runs the best skill, and falls back to a global edge search when no edge
clears the score threshold.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .geometry import ANGLE_DIMS, frame_arrays, normalize_pose, to_local
from .gtn import END, START, GTN
from .skill import SkillModel, bound_params
from .state import ROBOT, Problem, WorldState, params_from_dict, params_to_dict
from .tpgmm import instantiate
from .tphsmm import retrieve_trajectory, viterbi
from .world import DEMO_STEPS

TINY = np.finfo(float).tiny


@dataclass
class ExecConfig:
    rho_lower: float = 0.1
    max_steps: int = 40
    smoothness: float = 0.1
    horizon: int = DEMO_STEPS
    retrieve: bool = True

    def __post_init__(self):
        if not 0.0 < self.rho_lower < 1.0:
            raise ValueError("rho_lower must lie in (0, 1)")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")


@dataclass(frozen=True)
class Score:
    edge: tuple
    rho: float
    params: dict
    underflow: bool = False


@dataclass
class TraceRecord:
    event: str  # step, recovery, unrecoverable, goal or timeout
    node: str
    skill: str | None = None
    params: dict = field(default_factory=dict)
    rho: float | None = None
    state: WorldState | None = None
    candidates: list = field(default_factory=list)  # [(edge, rho), ...]
    underflow: bool = False

    def to_dict(self) -> dict:
        return {
            "event": self.event, "node": self.node, "skill": self.skill,
            "params": params_to_dict(self.params), "rho": None if self.rho is None else float(self.rho),
            "state": self.state.to_dict() if self.state is not None else None,
            "candidates": [{"edge": list(e), "rho": float(r)} for e, r in self.candidates],
            "underflow": bool(self.underflow),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TraceRecord":
        return cls(d["event"], d["node"], d.get("skill"), params_from_dict(d.get("params", {})), d.get("rho"),
                   WorldState.from_dict(d["state"]) if d.get("state") is not None else None,
                   [(tuple(c["edge"]), c["rho"]) for c in d.get("candidates", [])], d.get("underflow", False))


@dataclass
class ExecutionTrace:
    records: list = field(default_factory=list)
    planning_time: float = 0.0  # seconds spent scoring edges and choosing parameters
    queries: int = 0

    @property
    def outcome(self) -> str:
        return self.records[-1].event if self.records else "timeout"

    @property
    def succeeded(self) -> bool:
        return self.outcome == "goal"

    def skills(self) -> tuple:
        return tuple(r.skill for r in self.records if r.event == "step")

    def events(self, kind: str) -> list:
        return [r for r in self.records if r.event == kind]


def harmonic_mean(values) -> float:
    v = np.asarray(values, dtype=float)
    if v.size == 0 or np.any(v <= 0):
        raise ValueError("harmonic mean needs positive values")
    return float(v.size / np.sum(1.0 / v))


def _scale(cs, key) -> float:
    # tempered product: each of the P frames contributes a quarter of its precision
    return 1.0 / (4.0 * len(cs.frames[key]))


def _constraints(g: GTN, e):
    e = tuple(e)
    if e not in g.constraints:
        if e in g.edges:
            raise ValueError(f"edge {e} leads to the end node and has no constraints")
        raise KeyError(f"edge {e} is not in the task network")
    return g.constraints[e]


def component_log_density(model, frame_poses, x: np.ndarray) -> np.ndarray:
    """Per-component log of ``prod_p N(x in frame p)``, without priors."""
    local = np.stack([to_local(x, q) for q in frame_poses])
    _, logdet = np.linalg.slogdet(model.covs)
    return -0.5 * (model.frame_mahalanobis(local) + logdet.sum(axis=1))


def component_params(cs, k: int, s_k: WorldState, s_G: WorldState, tp: dict) -> dict:
    """``tp`` with every free parameter placed by component ``k`` of its edge model."""
    tp = dict(tp)
    for name, entity, dims in cs.free_params:
        key = ("param", name)
        gm = instantiate(cs.param_models[name], cs.frame_arrays(key, s_k, s_G, tp))
        pose = s_k.pose(entity)
        pose[list(dims)] = gm.means[k][list(dims)]
        tp[name] = normalize_pose(pose)
    return tp


def component_scores(cs, s_k: WorldState, s_G: WorldState, tps) -> np.ndarray:
    """Joint log density of component k at its own parameters ``tps[k]`` and the current objects."""
    priors = next(iter({**cs.param_models, **cs.object_models}.values())).priors
    with np.errstate(divide="ignore"):
        out = np.log(priors).copy()
    for k, tp in enumerate(tps):
        for name, _, _ in cs.free_params:
            key = ("param", name)
            out[k] += component_log_density(cs.param_models[name], cs.frame_poses(key, s_k, s_G, tp), tp[name])[k]
        for o in cs.objects:
            key = ("object", o)
            model = cs.object_models[o]
            out[k] += component_log_density(model, cs.frame_poses(key, s_k, s_G, tp), s_k.pose(o))[k]
    return out


def optimal_tp(g: GTN, e, s_k: WorldState, s_G: WorldState, skills) -> dict:
    """Bound parameters from ``s_k``; free parameters from the best-matching edge component.

    Each component proposes the means of its instantiated parameter models.
    The proposal kept is the one under which the parameters and the current
    object poses are jointly most probable, so a component describing a
    different stage of the task loses even when its frames are tight.
    """
    cs = _constraints(g, e)
    m: SkillModel = skills[cs.skill]
    tp = bound_params(m, s_k)
    if not cs.free_params:
        return tp
    tps = [component_params(cs, k, s_k, s_G, tp) for k in range(cs.n_mixture)]
    return tps[int(np.argmax(component_scores(cs, s_k, s_G, tps)))]


def object_log_match(model, x_local: np.ndarray, precision_scale: float) -> float:
    """Log of the normalized constraint density of one object, at most 0.

    For each component this is the tempered product of the frame Gaussians
    at the observation divided by its value when the observation sits on
    every frame mean. That equals the instantiated component density
    relative to its peak times the factor by which the frames disagree.
    The best component is kept.
    """
    return float(-0.5 * precision_scale * np.min(model.frame_mahalanobis(x_local)))


def object_frames_local(cs, key, s_k, s_G, tp) -> np.ndarray:
    x = s_k.pose(key[1])
    return np.stack([to_local(x, q) for q in cs.frame_poses(key, s_k, s_G, tp)])


def transition_score(g: GTN, e, s_k: WorldState, s_G: WorldState, tp_star: dict) -> Score:
    """Harmonic mean over the skill's objects of normalized constraint densities."""
    cs = _constraints(g, e)
    logs = []
    for o in cs.objects:
        key = ("object", o)
        x = object_frames_local(cs, key, s_k, s_G, tp_star)
        logs.append(object_log_match(cs.object_models[o], x, _scale(cs, key)))
    logs = np.asarray(logs)
    with np.errstate(divide="ignore", over="ignore"):
        log_rho = np.log(len(logs)) - logsumexp(-logs)
    rho = float(np.exp(log_rho)) if np.isfinite(log_rho) else 0.0
    underflow = rho < TINY
    return Score(tuple(e), max(rho, TINY) if underflow else min(rho, 1.0), tp_star, bool(underflow))


def score_edge(g: GTN, e, s_k, s_G, skills) -> Score:
    return transition_score(g, e, s_k, s_G, optimal_tp(g, e, s_k, s_G, skills))


def _best(scores):
    # largest rho; equal scores go to the lexicographically smallest target skill
    return min(scores, key=lambda sc: (-sc.rho, sc.edge[1], sc.edge[0]))


def next_skill(g: GTN, node: str, s_k: WorldState, s_G: WorldState, skills) -> tuple:
    """Best outgoing edge of ``node``: ``(skill, tp, rho, all scores)``."""
    if node not in g.nodes:
        raise KeyError(f"node {node!r} is not in the task network")
    edges = [e for e in g.outgoing(node) if e[1] != END]
    if not edges:
        raise ValueError(f"node {node!r} has no outgoing skill edges")
    scores = [score_edge(g, e, s_k, s_G, skills) for e in edges]
    best = _best(scores)
    return best.edge[1], best.params, best.rho, scores


def check_failure(scores, cfg: ExecConfig | None = None) -> bool:
    """True when no score clears the threshold (an empty list counts as failure)."""
    lower = (cfg or ExecConfig()).rho_lower
    scores = [sc.rho if isinstance(sc, Score) else float(sc) for sc in scores]
    return not any(r > lower for r in scores)


@dataclass(frozen=True)
class Recovery:
    edge: tuple | None
    rho: float
    scores: tuple

    @property
    def recovered(self) -> bool:
        return self.edge is not None


def recover(g: GTN, s_k: WorldState, s_G: WorldState, skills, cfg: ExecConfig | None = None) -> Recovery:
    """Global argmax over every skill edge; ``edge`` is None when even the best fails the threshold."""
    cfg = cfg or ExecConfig()
    scores = tuple(score_edge(g, e, s_k, s_G, skills) for e in g.edges if e[1] != END)
    if not scores:
        return Recovery(None, 0.0, scores)
    best = _best(scores)
    if best.rho <= cfg.rho_lower:
        return Recovery(None, best.rho, scores)
    return Recovery(best.edge, best.rho, scores)


def skill_trajectory(m: SkillModel, s: WorldState, tp: dict, cfg: ExecConfig) -> np.ndarray:
    """Robot trajectory for one skill: Viterbi schedule tracked from the current robot pose."""
    frames = [tp[p.name] for p in m.params]
    hsmm = m.trajectory.instantiate(frame_arrays(frames))
    schedule = viterbi(hsmm, (), cfg.horizon)
    return retrieve_trajectory(hsmm, schedule, s.pose(ROBOT), cfg.smoothness, ANGLE_DIMS)


def run(g: GTN, problem: Problem, env, skills, cfg: ExecConfig | None = None) -> ExecutionTrace:
    """Execute greedily until a goal is reached, recovery fails, or ``max_steps`` run out."""
    cfg = cfg or ExecConfig()
    skills = {m.name: m for m in skills} if not isinstance(skills, dict) else skills
    trace = ExecutionTrace()
    node = START
    s = env.observe()
    for step in range(cfg.max_steps + 1):
        idx = problem.satisfied_by(s)
        if idx is not None:
            trace.records.append(TraceRecord("goal", node, state=s))
            return trace
        if step == cfg.max_steps:
            break
        s_G = problem.goals[0]
        t0 = time.perf_counter()
        trace.queries += 1
        edges = [e for e in g.outgoing(node) if e[1] != END] if node in g.nodes else []
        scores = [score_edge(g, e, s, s_G, skills) for e in edges]
        if check_failure(scores, cfg):
            rec = recover(g, s, s_G, skills, cfg)
            trace.planning_time += time.perf_counter() - t0
            cands = [(sc.edge, sc.rho) for sc in rec.scores]
            if not rec.recovered:
                trace.records.append(TraceRecord("unrecoverable", node, rho=rec.rho, state=s, candidates=cands))
                return trace
            trace.records.append(TraceRecord("recovery", node, rec.edge[1], rho=rec.rho, state=s, candidates=cands))
            node = rec.edge[0]
            t0 = time.perf_counter()
            scores = [score_edge(g, e, s, s_G, skills) for e in g.outgoing(node) if e[1] != END]
        best = _best(scores)
        trace.planning_time += time.perf_counter() - t0
        name = best.edge[1]
        traj = skill_trajectory(skills[name], s, best.params, cfg) if cfg.retrieve else None
        s = env.execute(name, best.params, traj)
        trace.records.append(TraceRecord("step", node, name, best.params, best.rho, s,
                                         [(sc.edge, sc.rho) for sc in scores], best.underflow))
        node = name
    trace.records.append(TraceRecord("timeout", node, state=s))
    return trace
