import numpy as np
import pytest
from scipy.optimize import minimize

from geotasknet.geometry import YAW, wrap
from geotasknet.skill import (SkillSpec, TaskParamSpec, apply_effect, bound_params, demo_params, learn_skill,
                              precondition_loglik, precondition_mode_loglik, sample_free_params)
from geotasknet.state import ROBOT, TABLE
from geotasknet.tpgmm import gmm_pdf, mode
from geotasknet.world import BOX, LETTER, generate_demos, get_suite


@pytest.fixture(scope="module")
def suite_a():
    return get_suite("task_a")


@pytest.fixture(scope="module")
def learned(suite_a):
    return {n: learn_skill(generate_demos(suite_a, n, 9, 0.0, 7), suite_a.specs[n])
            for n in ("pick_standing", "rotate", "translate")}


def _held_states(suite, skill, n, seed):
    demos = generate_demos(suite, skill, n, 0.0, seed)
    return [(d.state_at(0), d) for d in demos]


def test_translate_effect_hits_free_frame(suite_a, learned):
    m = learned["translate"]
    rng = np.random.default_rng(3)
    for s, d in _held_states(suite_a, "translate", 50, 99):
        tp = demo_params(m.spec, d)
        tp["G"][:2] = rng.uniform(0.1, 0.9, 2)
        out = apply_effect(m, s, tp)
        assert np.max(np.abs(out.pose(LETTER)[:2] - tp["G"][:2])) < 1e-3


def test_translate_is_idempotent(suite_a, learned):
    m = learned["translate"]
    for s, d in _held_states(suite_a, "translate", 20, 5):
        tp = demo_params(m.spec, d)
        once = apply_effect(m, s, tp)
        twice = apply_effect(m, once, dict(tp, A=once.pose(LETTER), R=once.pose(ROBOT)))
        diff = twice.as_array() - once.as_array()
        diff[:, YAW] = wrap(diff[:, YAW])
        assert np.max(np.abs(diff)) < 1e-3


def test_rotate_reaches_free_yaw(suite_a, learned):
    m = learned["rotate"]
    for s, d in _held_states(suite_a, "rotate", 30, 11):
        tp = demo_params(m.spec, d)
        out = apply_effect(m, s, tp)
        assert abs(wrap(out.pose(LETTER)[YAW] - tp["G"][YAW])) < 1e-2


def test_single_demo_precondition_mean(suite_a):
    (d,) = generate_demos(suite_a, "pick_flat", 1, 0.0, 4)
    m = learn_skill([d], suite_a.specs["pick_flat"], K=1)
    s0 = d.state_at(0)
    tp = demo_params(m.spec, d)
    for e in m.spec.modeled_entities:
        frames = m.spec.precondition_params(e)
        for p, name in enumerate(frames):
            q = np.zeros(4) if name == TABLE else tp[name]
            c, s = np.cos(q[YAW]), np.sin(q[YAW])
            dx = s0.pose(e) - q
            local = np.array([c * dx[0] + s * dx[1], -s * dx[0] + c * dx[1], wrap(dx[YAW]), dx[3]])
            mu = m.precondition[e].means[0, p]
            np.testing.assert_allclose(local[[0, 1, 3]], mu[[0, 1, 3]], atol=1e-12)
            assert abs(wrap(local[YAW] - mu[YAW])) < 1e-12


def test_untouched_object_stays(suite_a):
    suite = get_suite("task_b")
    m = learn_skill(generate_demos(suite, "pick_box", 9, 0.0, 2), suite.specs["pick_box"])
    for s, d in _held_states(suite, "pick_box", 20, 8):
        out = apply_effect(m, s, demo_params(m.spec, d))
        diff = out.pose(LETTER) - s.pose(LETTER)
        diff[YAW] = wrap(diff[YAW])
        assert np.max(np.abs(diff)) < 1e-6


def test_unmodelled_entity_unchanged():
    suite = get_suite("task_b")
    m = learn_skill(generate_demos(suite, "rotate", 9, 0.0, 2), suite.specs["rotate"])
    s, d = _held_states(suite, "rotate", 1, 3)[0]
    out = apply_effect(m, s, demo_params(m.spec, d))
    np.testing.assert_array_equal(out.pose(BOX), s.pose(BOX))


def test_apply_effect_deterministic(suite_a, learned):
    m = learned["rotate"]
    s, d = _held_states(suite_a, "rotate", 1, 13)[0]
    tp = demo_params(m.spec, d)
    np.testing.assert_array_equal(apply_effect(m, s, tp).as_array(), apply_effect(m, s, tp).as_array())


def test_missing_params_rejected(suite_a, learned):
    m = learned["rotate"]
    s, _ = _held_states(suite_a, "rotate", 1, 13)[0]
    with pytest.raises(ValueError):
        apply_effect(m, s, bound_params(m, s))


def _oracle_loglik(m, s, tp):
    """Sum over entities and frames of Gaussian log densities of the entity seen from each frame."""
    total = 0.0
    for e in m.spec.modeled_entities:
        model = m.precondition[e]
        for p, name in enumerate(m.spec.precondition_params(e)):
            q = np.zeros(4) if name == TABLE else tp[name]
            c, sn = np.cos(q[YAW]), np.sin(q[YAW])
            dx = s.pose(e) - q
            local = np.array([c * dx[0] + sn * dx[1], -sn * dx[0] + c * dx[1], dx[YAW], dx[3]])
            mu = model.means[0, p]
            local[YAW] = mu[YAW] + wrap(local[YAW] - mu[YAW])
            S = model.covs[0, p]
            diff = local - mu
            total += -0.5 * (diff @ np.linalg.solve(S, diff) + np.linalg.slogdet(S)[1] + 4 * np.log(2 * np.pi))
    return total


def test_precondition_matches_density_oracle(suite_a, learned):
    m = learned["pick_standing"]
    for s, d in _held_states(suite_a, "pick_standing", 50, 21):
        s = s.with_pose(LETTER, s.pose(LETTER) + [0.02, -0.01, 0.3, 0.0])
        tp = bound_params(m, s)
        assert precondition_loglik(m, s, tp) == pytest.approx(_oracle_loglik(m, s, tp), abs=1e-6)


def _letter_optimum(m, s):
    def neg(xy):
        t = s.with_pose(LETTER, np.r_[xy, s.pose(LETTER)[2:]])
        return -precondition_loglik(m, t, bound_params(m, t))
    res = minimize(neg, s.pose(LETTER)[:2], method="BFGS", options={"gtol": 1e-10})
    return s.with_pose(LETTER, np.r_[res.x, s.pose(LETTER)[2:]])


def test_precondition_peak_and_tails(suite_a, learned):
    m = learned["pick_standing"]
    s, _ = _held_states(suite_a, "pick_standing", 1, 31)[0]
    best = _letter_optimum(m, s)
    top = precondition_loglik(m, best, bound_params(m, best))
    assert top <= precondition_mode_loglik(m) + 1e-9
    rng = np.random.default_rng(0)
    for _ in range(200):
        t = best.with_pose(LETTER, best.pose(LETTER) + np.r_[rng.normal(0, 0.05, 2), 0, 0])
        assert precondition_loglik(m, t, bound_params(m, t)) <= top + 1e-9
    far = best.with_pose(LETTER, best.pose(LETTER) + [5.0, 5.0, 0.0, 0.0])
    assert precondition_loglik(m, far, bound_params(m, far)) < top - 40


def test_precondition_decreases_along_rays(suite_a, learned):
    m = learned["pick_standing"]
    s, _ = _held_states(suite_a, "pick_standing", 1, 32)[0]
    best = _letter_optimum(m, s)
    for a in np.linspace(0, 2 * np.pi, 8, endpoint=False):
        u = np.array([np.cos(a), np.sin(a), 0.0, 0.0])
        vals = []
        for r in (0.02, 0.04, 0.06, 0.08, 0.1):
            t = best.with_pose(LETTER, best.pose(LETTER) + r * u)
            vals.append(precondition_loglik(m, t, bound_params(m, t)))
        assert np.all(np.diff(vals) < 0)


def test_sampling_without_free_params(suite_a, learned):
    m = learned["pick_standing"]
    s, _ = _held_states(suite_a, "pick_standing", 1, 3)[0]
    (tp,) = sample_free_params(m, s, 5, 0)
    assert set(tp) == {"A", "R", "T"}


def test_sampling_prefix_is_component_means(suite_a, learned):
    m = learned["translate"]
    s, _ = _held_states(suite_a, "translate", 1, 3)[0]
    g = m.prior_gmm("G")
    tps = sample_free_params(m, s, g.n_components, 0)
    got = sorted(tuple(tp["G"][:2]) for tp in tps)
    np.testing.assert_allclose(got, sorted(tuple(mu) for mu in g.means))


def test_sampled_params_are_plausible(suite_a, learned):
    m = learned["translate"]
    s, _ = _held_states(suite_a, "translate", 1, 3)[0]
    g = m.prior_gmm("G")
    peak = gmm_pdf(g, mode(g))
    tps = sample_free_params(m, s, 200, 1)
    ok = [gmm_pdf(g, tp["G"][:2]) >= 1e-6 * peak for tp in tps]
    assert np.mean(ok) >= 0.95


def test_learn_requires_demos(suite_a):
    with pytest.raises(ValueError):
        learn_skill([], suite_a.specs["rotate"])


def test_spec_validation():
    with pytest.raises(ValueError):
        TaskParamSpec("G", LETTER, (0, 0))
    with pytest.raises(ValueError):
        SkillSpec("s", (LETTER,), ())
    spec = SkillSpec("s", (LETTER,), (TaskParamSpec("A", LETTER), TaskParamSpec("G", LETTER, (2,))))
    assert SkillSpec.from_dict(spec.to_dict()) == spec
