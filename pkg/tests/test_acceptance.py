"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL ...`` line to the
terminal (not captured) before asserting.
"""
import time

import numpy as np
import pytest

from geotasknet import executor, pipeline
from geotasknet.executor import ExecConfig, harmonic_mean, run
from geotasknet.gauss import Gaussian, product
from geotasknet.geometry import YAW, wrap
from geotasknet.gtn import END, START, collect_transitions
from geotasknet.skill import apply_effect, demo_params, learn_skill
from geotasknet.state import ROBOT, WorldState
from geotasknet.tphsmm import HSMM, ComponentSchedule, retrieve_trajectory, viterbi
from geotasknet.tpgmm import GMM, EMConfig, fit_em
from geotasknet.world import LETTER, Environment, generate_demos, get_suite
from oracles import enumerate_schedules, mvn_pdf, random_spd, schedule_scorer

BOX_SKILLS = ("pick_box", "translate_box")


def report(request, n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    with request.config.pluginmanager.getplugin("capturemanager").global_and_fixture_disabled():
        print("\n" + line, flush=True)
    assert ok, line


# ---------------------------------------------------------------------------
# 1. numeric oracles
# ---------------------------------------------------------------------------

def _product_cases(rng):
    worst = 0.0
    for _ in range(100):
        d, n = int(rng.integers(1, 5)), int(rng.integers(2, 5))
        gs = [Gaussian(rng.normal(0, 2, d), random_spd(rng, d, 0.1, 3.0)) for _ in range(n)]
        g, ls = product(gs)
        for x in g.mean + rng.standard_normal((50, d)):
            lhs = np.prod([mvn_pdf(x, h.mean, h.cov) for h in gs])
            rhs = np.exp(ls) * mvn_pdf(x, g.mean, g.cov)
            worst = max(worst, abs(lhs - rhs) / lhs)
    return worst


def _random_hsmm(rng, K, d=2):
    emission = GMM(rng.dirichlet(np.ones(K)), rng.normal(0, 2, (K, d)), np.stack([random_spd(rng, d) for _ in range(K)]))
    trans = np.ones((1, 1)) if K == 1 else rng.uniform(0.05, 1.0, (K, K))
    np.fill_diagonal(trans, 0.0 if K > 1 else 1.0)
    trans /= trans.sum(axis=1, keepdims=True)
    durations = np.stack([rng.uniform(1.0, 4.0, K), rng.uniform(0.5, 2.0, K)], axis=1)
    return HSMM(emission, trans, durations, rng.dirichlet(np.ones(K)))


def _viterbi_cases(rng):
    agree = 0
    for _ in range(200):
        K, T = int(rng.integers(1, 4)), int(rng.integers(1, 9))
        model = _random_hsmm(rng, K)
        prefix = model.emission.sample(int(rng.integers(0, T + 1)), rng)
        emis = [model.emission.component_logpdf(x) for x in prefix]
        with np.errstate(divide="ignore"):
            score = schedule_scorer(np.log(model.initial), np.log(model.trans), model.durations, emis, T)
        ranked = sorted(((score(s), s) for s in enumerate_schedules(K, T)), key=lambda p: -p[0])
        got = viterbi(model, prefix, T).segments
        unique = len(ranked) == 1 or ranked[0][0] - ranked[1][0] > 1e-9
        agree += (got == ranked[0][1]) if unique else abs(score(got) - ranked[0][0]) <= 1e-9
    return agree


def _em_cases(rng):
    ok = 0
    for i in range(20):
        N, P, d, K = rng.integers(20, 80), rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 4)
        centres = rng.normal(0, 3, size=(K, P, d))
        X = centres[rng.integers(K, size=N)] + rng.normal(0, 1, size=(N, P, d))
        m = fit_em(X, int(K), EMConfig(seed=i, max_iter=100))
        ok += bool(np.all(np.diff(m.log_likelihoods) >= -1e-9))
    return ok


def _retrieve_cases(rng):
    worst = 0.0
    for _ in range(20):
        K, T = int(rng.integers(1, 4)), int(rng.integers(3, 20))
        model = _random_hsmm(rng, K, d=3)
        segs, t = [], 0
        while t < T:
            dur = int(rng.integers(1, T - t + 1))
            segs.append((int(rng.integers(K)), dur))
            t += dur
        sched = ComponentSchedule(tuple(segs))
        X = retrieve_trajectory(model, sched, rng.standard_normal(3), 0.0)
        ks = sched.per_step()
        worst = max(worst, np.max(np.abs(X[1:] - model.emission.means[ks[1:]])))
    return worst


def test_criterion_1_numeric_oracles(request):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    prod_err = _product_cases(rng)
    vit = _viterbi_cases(rng)
    em = _em_cases(rng)
    ret = _retrieve_cases(rng)
    dt = time.perf_counter() - t0
    ok = prod_err < 1e-9 and vit == 200 and em == 20 and ret <= 1e-9 and dt < 10.0
    report(request, 1, ok, f"product rel err {prod_err:.1e}, viterbi {vit}/200, EM monotone {em}/20, "
                           f"retrieve err {ret:.1e}, {dt:.1f}s")


# ---------------------------------------------------------------------------
# 2. skill grounding
# ---------------------------------------------------------------------------

def test_criterion_2_skill_grounding(request):
    worst, where = 0.0, None
    for name in ("task_a", "task_b"):
        suite = get_suite(name)
        for sk in suite.skill_names:
            m = learn_skill(generate_demos(suite, sk, 9, 0.0, 1), suite.specs[sk])
            for d in generate_demos(suite, sk, 50, 0.0, 99):
                s0, tp = d.state_at(0), demo_params(m.spec, d)
                diff = apply_effect(m, s0, tp).as_array() - suite.transition(sk, s0, tp).as_array()
                diff[:, YAW] = wrap(diff[:, YAW])
                err = float(np.max(np.abs(diff)))
                if err > worst:
                    worst, where = err, f"{name}/{sk}"
    report(request, 2, worst <= 1e-2, f"max effect error {worst:.2e} ({where})")


# ---------------------------------------------------------------------------
# 3, 4. Task-A pipeline and branching
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def bench_a():
    t0 = time.perf_counter()
    clean = pipeline.bench("task_a", 40, 40, 0, 0.0)
    noisy = pipeline.bench("task_a", 40, 40, 0, 0.01)
    return clean, noisy, time.perf_counter() - t0


def test_criterion_3_task_a_pipeline(request, bench_a):
    (r0, _), (r1, _), dt = bench_a
    solved = r0.dataset_size / r0.n_train
    ok = solved >= 0.95 and r0.success_rate >= 0.9 and r1.success_rate >= 0.8 and r0.speedup >= 10 and dt < 600
    report(request, 3, ok, f"training solved {solved:.3f}, success {r0.success_rate:.3f} (noise 0) "
                           f"{r1.success_rate:.3f} (noise 0.01), speedup {r0.speedup:.1f}x, {dt:.0f}s")


def test_criterion_4_branch_correctness(request, bench_a):
    (_, eps), _, _ = bench_a
    right = sum(any(s.startswith("reorient") for s in e.skills) == e.needs_reorientation for e in eps)
    report(request, 4, right == len(eps), f"reorientation iff flags differ on {right}/{len(eps)}")


# ---------------------------------------------------------------------------
# 5. Task-B tool use
# ---------------------------------------------------------------------------

def test_criterion_5_task_b_tool_use(request, task_b):
    eps = pipeline.validate(task_b.gtn, task_b.skills, task_b.suite, task_b.valid, tamp=False)
    right = sum(any(s in BOX_SKILLS for s in e.skills) == e.needs_reorientation for e in eps)
    goal = sum(e.outcome == "goal" for e in eps)
    report(request, 5, right / len(eps) >= 0.9, f"box moved iff reorientation on {right}/{len(eps)} "
                                                 f"(goal reached {goal}/{len(eps)})")


# ---------------------------------------------------------------------------
# 6. network structure
# ---------------------------------------------------------------------------

def test_criterion_6_structure(request, task_a):
    g, plans = task_a.gtn, task_a.dataset.discrete_plans()
    n_ok = all(g.n_comp[e] == len({p for p in plans if e in set(zip([START, *p], [*p, END]))}) for e in g.edges)
    _, buckets = collect_transitions(task_a.dataset)
    n_ok = n_ok and set(buckets) == set(g.edges)
    walks = all(g.is_walk(p) for p in plans)
    same = 0
    for plan in task_a.dataset.plans:
        p = plan.problem
        same += run(g, p, Environment(task_a.suite, p.start), task_a.skills).skills() == plan.discrete()
    rate = same / len(task_a.dataset.plans)
    report(request, 6, n_ok and walks and rate >= 0.9,
           f"N_e scan {'ok' if n_ok else 'mismatch'}, walks {'ok' if walks else 'broken'}, replay {rate:.3f}")


# ---------------------------------------------------------------------------
# 7. recovery scenarios
# ---------------------------------------------------------------------------

def _teleport(task_a, p):
    nominal = run(task_a.gtn, p, Environment(task_a.suite, p.start), task_a.skills).skills()
    j = nominal.index("reset")
    env = Environment(task_a.suite, p.start, perturbations={j: [(LETTER, [0.4, 0.4, 0.3, np.nan])]})
    trace = run(task_a.gtn, p, env, task_a.skills)
    # a recovery record is only written once every outgoing score is at or below the threshold
    return trace.succeeded and len(trace.events("recovery")) == 1


def _revert(task_a, p):
    nominal = run(task_a.gtn, p, Environment(task_a.suite, p.start), task_a.skills)
    steps = nominal.skills()
    states = [r.state for r in nominal.records if r.event == "step"]
    j = next(k for k, s in enumerate(steps) if s.startswith("reorient"))
    pre = states[j - 1]
    env = Environment(task_a.suite, p.start,
                      perturbations={j: [(LETTER, pre.pose(LETTER)), (ROBOT, pre.pose(ROBOT))]})
    trace = run(task_a.gtn, p, env, task_a.skills)
    return trace.succeeded and trace.skills().count(steps[j]) >= 2


def test_criterion_7_recovery(request, task_a):
    flips = [p for p in task_a.valid if pipeline.needs_reorientation(p)]
    a = [_teleport(task_a, p) for p in flips]
    b = [_revert(task_a, p) for p in flips]
    again = [_teleport(task_a, flips[0]), _revert(task_a, flips[0])]
    ok = all(a) and all(b) and again == [a[0], b[0]]
    report(request, 7, ok, f"teleport recovered {sum(a)}/{len(a)}, reverted reorientation repeated "
                           f"{sum(b)}/{len(b)}")


# ---------------------------------------------------------------------------
# 8. score properties
# ---------------------------------------------------------------------------

def test_criterion_8_scores(request, task_a):
    rng = np.random.default_rng(8)
    g = task_a.gtn
    edges = [e for e in g.edges if e[1] != END]
    rhos = []
    for _ in range(1000):
        p = task_a.valid[int(rng.integers(len(task_a.valid)))]
        letter = np.r_[rng.uniform(-0.2, 1.2, 2), rng.uniform(-np.pi, np.pi), rng.integers(2)]
        robot = np.r_[rng.uniform(-0.2, 1.2, 2), rng.uniform(-np.pi, np.pi), rng.integers(2)]
        e = edges[int(rng.integers(len(edges)))]
        rhos.append(executor.score_edge(g, e, WorldState(robot, {LETTER: letter}), p.goal, task_a.skills).rho)
    in_range = all(0 < r <= 1 for r in rhos)
    at_mode = _score_at_modes()
    hm = harmonic_mean([1.0, 1.0 / 3.0])
    ok = in_range and at_mode == 1.0 and abs(hm - 0.5) < 1e-12
    report(request, 8, ok, f"rho in (0,1] on {len(rhos)} evaluations (min {min(rhos):.1e}), "
                           f"rho at modes {at_mode}, HM(1,1/3) {hm}")


def _score_at_modes():
    """Objects placed exactly on the means of a hand-built two-object edge."""
    from geotasknet.gtn import GTN, ConstraintSet
    from geotasknet.skill import SkillModel, SkillSpec, TaskParamSpec
    from geotasknet.state import TABLE
    from geotasknet.tpgmm import TPGMM
    from geotasknet.world import BOX, HOME

    targets = {LETTER: [0.3, 0.2, 0.5, 1.0], BOX: [0.7, 0.6, -1.0, 0.0]}
    models = {o: TPGMM([1.0], np.asarray(t, float)[None, None], 0.01 * np.eye(4)[None, None], (YAW,))
              for o, t in targets.items()}
    cs = ConstraintSet("s", (LETTER, BOX), (), {}, models, {("object", o): (("cur", TABLE),) for o in targets})
    g = GTN((START, "s", END), ((START, "s"), ("s", END)), {(START, "s"): cs}, {(START, "s"): 1, ("s", END): 1})
    skill = SkillModel(SkillSpec("s", (LETTER,), (TaskParamSpec("A", LETTER),)), None, {}, {})
    s = WorldState(HOME, targets)
    return executor.score_edge(g, (START, "s"), s, s, {"s": skill}).rho
