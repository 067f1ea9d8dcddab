"""End-to-end pipeline: demonstrations, skills, plan data, task network, validation."""
from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import gtn as gtn_mod
from .executor import ExecConfig, run
from .skill import learn_skill
from .tamp import NoPlanFound, SearchConfig, generate_dataset, problem_seed, solve
from .world import LETTER, Environment, TaskSuite, generate_demos, get_suite

# Single-Gaussian preconditions have heavy penalty tails, so the pipeline
# prunes later than the library default.
PIPELINE_SEARCH = SearchConfig(precond_gate=100.0)
PIPELINE_DEMOS = 20

# sub-seeds derived from the user seed
_DEMO_STREAM, _TRAIN_STREAM, _VALID_STREAM, _EXEC_STREAM = 0, 1, 2, 3


def sub_seed(seed: int, stream: int, index: int = 0) -> int:
    return problem_seed(problem_seed(seed, stream), index)


def learn_suite_skills(suite: TaskSuite, n_demos: int = PIPELINE_DEMOS, noise: float = 0.0, seed: int = 0) -> list:
    return [learn_skill(generate_demos(suite, name, n_demos, noise, sub_seed(seed, _DEMO_STREAM, i)), suite.specs[name])
            for i, name in enumerate(suite.skill_names)]


def train_problems(suite: TaskSuite, n: int, seed: int) -> list:
    return suite.problems(n, sub_seed(seed, _TRAIN_STREAM))


def valid_problems(suite: TaskSuite, n: int, seed: int) -> list:
    return suite.problems(n, sub_seed(seed, _VALID_STREAM))


def needs_reorientation(problem) -> bool:
    return bool(problem.start.pose(LETTER)[3] != problem.goal.pose(LETTER)[3])


@dataclass
class Episode:
    index: int
    outcome: str
    skills: tuple
    tamp_skills: tuple | None
    tamp_time: float
    gtn_time: float
    queries: int
    recoveries: int
    needs_reorientation: bool


@dataclass
class BenchReport:
    suite: str
    n_train: int
    n_valid: int
    noise: float
    dataset_size: int
    train_failures: int
    t_data: float
    nodes: int
    edges: int
    components: int
    t_learn: float
    t_tamp: float  # mean TAMP solve time per validation problem
    t_gtn: float  # mean executor planning time per validation problem
    t_query: float  # mean time of one executor decision
    success_rate: float
    tamp_agreement: float
    speedup: float
    config_hash: str

    def row(self) -> dict:
        return asdict(self)


def config_hash(**cfg) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def validate(g, skills, suite: TaskSuite, problems, noise: float = 0.0, seed: int = 0, tamp: bool = True,
             cfg: ExecConfig | None = None, search: SearchConfig = PIPELINE_SEARCH, jobs: int = 1) -> list:
    """Run the executor (and optionally TAMP, for timing and agreement) on every problem."""
    skills = {m.name: m for m in skills} if not isinstance(skills, dict) else skills
    models = list(skills.values())

    def one(i):
        p = problems[i]
        tamp_skills, t_tamp = None, float("nan")
        if tamp:
            sc = SearchConfig(search.max_expansions, search.samples_per_free_param, search.state_tol,
                              search.precond_gate, problem_seed(seed, i))
            t0 = time.perf_counter()
            try:
                tamp_skills = solve(p, models, sc).discrete()
            except NoPlanFound:
                pass
            t_tamp = time.perf_counter() - t0
        env = Environment(suite, p.start, noise, seed=sub_seed(seed, _EXEC_STREAM, i))
        trace = run(g, p, env, skills, cfg)
        return Episode(i, trace.outcome, trace.skills(), tamp_skills, t_tamp, trace.planning_time, trace.queries,
                       len(trace.events("recovery")), needs_reorientation(p))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, range(len(problems))))
    return [one(i) for i in range(len(problems))]


def bench(suite_name: str, n_train: int, n_valid: int, seed: int = 0, noise: float = 0.0, jobs: int = 1,
          n_demos: int = PIPELINE_DEMOS) -> tuple:
    """Full pipeline with timings; returns ``(BenchReport, episodes)``."""
    suite = get_suite(suite_name)
    skills = learn_suite_skills(suite, n_demos, 0.0, seed)
    t0 = time.perf_counter()
    ds = generate_dataset(train_problems(suite, n_train, seed), skills, PIPELINE_SEARCH, seed, jobs)
    t_data = time.perf_counter() - t0
    t0 = time.perf_counter()
    g = gtn_mod.learn(ds, {m.name: m for m in skills}, seed)
    t_learn = time.perf_counter() - t0
    # timing comparisons run single-threaded
    eps = validate(g, skills, suite, valid_problems(suite, n_valid, seed), noise, seed, True, jobs=1)
    t_tamp = float(np.mean([e.tamp_time for e in eps]))
    t_gtn = float(np.mean([e.gtn_time for e in eps]))
    queries = sum(e.queries for e in eps)
    n_nodes, n_edges, n_comp = g.size
    report = BenchReport(
        suite_name, n_train, n_valid, noise, len(ds), len(ds.failures), t_data, n_nodes, n_edges, n_comp, t_learn,
        t_tamp, t_gtn, sum(e.gtn_time for e in eps) / max(queries, 1),
        float(np.mean([e.outcome == "goal" for e in eps])),
        float(np.mean([e.skills == e.tamp_skills for e in eps])),
        t_tamp / t_gtn if t_gtn > 0 else float("inf"),
        config_hash(suite=suite_name, train=n_train, valid=n_valid, seed=seed, noise=noise, demos=n_demos,
                    search=asdict(PIPELINE_SEARCH) | {"state_tol": PIPELINE_SEARCH.state_tol.tolist()},
                    exec=asdict(ExecConfig())))
    return report, eps
