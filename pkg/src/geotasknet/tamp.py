"""Uniform-cost hybrid search over skills and sampled task parameters.

Successor states are predicted by the skills' effect models, so no simulator
is involved. The search produces the plans that the task network learns from.
"""
from __future__ import annotations

import heapq
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .skill import (SkillModel, apply_effect, bound_params, complete_params, precondition_loglik,
                    precondition_mode_loglik, sample_free_values)
from .state import STATE_TOL, Plan, PlanDataset, PlanStep, Problem, WorldState, state_key


class NoPlanFound(RuntimeError):
    def __init__(self, message, expansions=0, frontier=0, visited=0):
        super().__init__(message)
        self.expansions = expansions
        self.frontier = frontier
        self.visited = visited

    @property
    def stats(self) -> dict:
        return {"expansions": self.expansions, "frontier": self.frontier, "visited": self.visited}


@dataclass
class SearchConfig:
    max_expansions: int = 50_000
    samples_per_free_param: int = 2
    state_tol: np.ndarray = field(default_factory=lambda: STATE_TOL.copy())
    precond_gate: float = 25.0
    seed: int = 0


def precondition_scores(m: SkillModel, s: WorldState, tp: dict) -> tuple:
    """``(L, L*)``: precondition log-likelihood at ``s`` and its value at the modes."""
    return precondition_loglik(m, s, tp), precondition_mode_loglik(m, tp)


COST_SCALE = 100  # edge costs are quantized to 0.01 and summed as integers so ties are exact


def edge_cost(L: float, Lstar: float) -> float:
    return round(1.0 + max(0.0, (Lstar - L) / 10.0), 2)


def _dedupe(values):
    out, seen = [], set()
    for v in values:
        key = tuple(np.round(np.asarray(v, dtype=float), 9).tolist())
        if key not in seen:
            seen.add(key)
            out.append(np.asarray(v, dtype=float))
    return out


def free_candidates(m: SkillModel, problem: Problem, n: int, rng: np.random.Generator) -> dict:
    """Candidate values per free parameter for one problem.

    Prior means and draws come first, followed by values read off each goal
    for parameters anchored on a goal-masked entity.
    """
    values = sample_free_values(m, n, rng)
    for p in m.spec.free_params:
        mask = problem.goal_mask.get(p.entity)
        if mask is not None and np.any(mask[list(p.free_dims)]):
            values[p.name] = values[p.name] + [g.pose(p.entity)[list(p.free_dims)] for g in problem.goals]
        values[p.name] = _dedupe(values[p.name])
    return values


class Expander:
    """Enumerates ``(skill, params, successor, cost)`` for a state within one problem."""

    def __init__(self, problem: Problem, skills, cfg: SearchConfig):
        self.skills = list(skills)
        self.cfg = cfg
        self.candidates = []
        for i, m in enumerate(self.skills):
            rng = np.random.default_rng([int(cfg.seed), i])
            vals = free_candidates(m, problem, cfg.samples_per_free_param, rng)
            names = [p.name for p in m.spec.free_params]
            self.candidates.append([dict(zip(names, combo)) for combo in itertools.product(*(vals[n] for n in names))])

    def __call__(self, s: WorldState):
        for m, cands in zip(self.skills, self.candidates):
            # preconditions never depend on free parameters
            L, Lstar = precondition_scores(m, s, bound_params(m, s))
            if L < Lstar - self.cfg.precond_gate:
                continue
            cost = edge_cost(L, Lstar)
            for free in cands:
                tp = complete_params(m, s, free)
                yield m.name, tp, apply_effect(m, s, tp), cost


def solve(problem: Problem, skills, cfg: SearchConfig | None = None) -> Plan:
    """Minimum-cost plan from ``problem.start`` to any goal (Dijkstra).

    States whose quantized keys coincide are merged. Equal-cost entries pop in
    insertion order, so ties follow the order of ``skills``.
    """
    cfg = cfg or SearchConfig()
    tol = np.asarray(cfg.state_tol, dtype=float)
    expand = Expander(problem, skills, cfg)
    start_key = state_key(problem.start, tol)
    states = {start_key: problem.start}
    best = {start_key: 0}
    parent = {start_key: None}
    counter = itertools.count()
    heap = [(0, next(counter), start_key)]
    closed = set()
    expansions = 0
    while heap:
        cost, _, key = heapq.heappop(heap)
        if key in closed or cost > best[key]:
            continue
        closed.add(key)
        s = states[key]
        if problem.satisfied_by(s, tol) is not None:
            return Plan(problem, _backtrack(parent, key), cost / COST_SCALE)
        if expansions >= cfg.max_expansions:
            # the state just popped is still unexpanded
            raise NoPlanFound(f"no plan within {cfg.max_expansions} expansions", expansions, len(heap) + 1,
                              len(closed) - 1)
        expansions += 1
        for name, tp, nxt, step_cost in expand(s):
            nkey = state_key(nxt, tol)
            if nkey in closed:
                continue
            new_cost = cost + int(round(step_cost * COST_SCALE))
            if nkey not in best or new_cost < best[nkey]:
                best[nkey] = new_cost
                states[nkey] = nxt
                parent[nkey] = (key, PlanStep(s, name, tp, nxt))
                heapq.heappush(heap, (new_cost, next(counter), nkey))
    raise NoPlanFound("search space exhausted without reaching a goal", expansions, 0, len(closed))


def _backtrack(parent, key):
    steps = []
    while parent[key] is not None:
        key, step = parent[key]
        steps.append(step)
    return list(reversed(steps))


def problem_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def generate_dataset(problems, skills, cfg: SearchConfig | None = None, seed: int = 0, jobs: int = 1) -> PlanDataset:
    """Solve every problem independently; failures are collected, not raised."""
    cfg = cfg or SearchConfig()
    problems = list(problems)
    if not problems:
        raise ValueError("no problems to solve")

    def run(i):
        pc = SearchConfig(cfg.max_expansions, cfg.samples_per_free_param, cfg.state_tol, cfg.precond_gate,
                          problem_seed(seed, i))
        try:
            return solve(problems[i], skills, pc), None
        except NoPlanFound as exc:
            return None, f"{exc} ({exc.stats})"

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, range(len(problems))))
    else:
        results = [run(i) for i in range(len(problems))]
    ds = PlanDataset()
    for i, (plan, err) in enumerate(results):
        if plan is None:
            ds.failures.append((i, err))
        else:
            ds.plans.append(plan)
    return ds
