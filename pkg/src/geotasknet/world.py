"""Synthetic planar desk worlds: scripted skills, demonstrations, problems and an environment.

Task A manipulates one letter that is either standing (c=1) or lying (c=0).
Changing its orientation needs a side grasp at the table edge. Task B adds a
box; the letter is reoriented on top of the box at a staging spot instead of
at the edge, and the box has to be returned afterwards.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import CONTINUOUS, POSE_DIM, YAW, normalize_pose, wrap
from .skill import SkillSpec, TaskParamSpec
from .state import ROBOT, Demonstration, Problem, WorldState, state_satisfies

HOME = np.array([0.5, -0.3, 0.0, 0.0])
INTERIOR = (0.15, 0.75)
EDGE_X = (0.92, 0.99)
EDGE_Y = (0.3, 0.7)
EDGE_DEMO_Y = (0.25, 0.75)
EDGE_POINT = np.array([0.955, 0.5])
STAGING = (0.89, 0.91)
STAGING_POINT = np.array([0.9, 0.9])
BOX_OFFSET = 0.01
DEMO_STEPS = 30

LETTER = "letter"
BOX = "box"


def _uniform_yaw(rng):
    return float(rng.uniform(-np.pi, np.pi))


def _interior_xy(rng):
    return rng.uniform(*INTERIOR, size=2)


def _edge_xy(rng, y_range=EDGE_DEMO_Y):
    return np.array([rng.uniform(*EDGE_X), rng.uniform(*y_range)])


def _anywhere_xy(rng):
    return _edge_xy(rng) if rng.random() < 0.5 else _interior_xy(rng)


def _pose(xy, yaw, c):
    return normalize_pose(np.array([xy[0], xy[1], yaw, c], dtype=float))


def _grasp(letter, relative_yaw=0.0):
    return _pose(letter[:2], letter[YAW] + relative_yaw, 1.0)


# ---------------------------------------------------------------------------
# scripted transitions: (state, task params) -> state
# ---------------------------------------------------------------------------

def _pick(entity, relative_yaw=0.0):
    def run(s, tp):
        return s.with_pose(ROBOT, _grasp(s.pose(entity), relative_yaw))
    return run


def _reorient(standing_after, robot_relative_yaw):
    def run(s, tp):
        letter = s.pose(LETTER)
        new = _pose(letter[:2], 0.0, 1.0 if standing_after else 0.0)
        return s.with_pose(LETTER, new).with_pose(ROBOT, _grasp(new, robot_relative_yaw))
    return run


def _rotate(s, tp):
    letter, robot = s.pose(LETTER), s.pose(ROBOT)
    target = tp["G"][YAW]
    robot[YAW] = robot[YAW] + wrap(target - letter[YAW])
    letter[YAW] = target
    return s.with_pose(LETTER, normalize_pose(letter)).with_pose(ROBOT, normalize_pose(robot))


def _translate(entity):
    def run(s, tp):
        obj, robot = s.pose(entity), s.pose(ROBOT)
        delta = tp["G"][:2] - obj[:2]
        obj[:2] += delta
        robot[:2] += delta
        return s.with_pose(entity, obj).with_pose(ROBOT, robot)
    return run


def _reset(s, tp):
    return s.with_pose(ROBOT, HOME)


# ---------------------------------------------------------------------------
# demonstration start samplers: (rng, extra, i) -> (start state, free parameter poses)
# ``i`` is the demonstration index, used to cycle through start variants.
# ---------------------------------------------------------------------------

def _home_with_letter(standing, region=_anywhere_xy):
    def sample(rng, extra, i):
        letter = _pose(region(rng), _uniform_yaw(rng), 1.0 if standing else 0.0)
        return WorldState(HOME, dict(extra(rng), letter=letter)), {}
    return sample


def _holding_letter(rng, extra, region=_anywhere_xy, standing=None, relative_yaw=0.0):
    flag = float(rng.integers(2)) if standing is None else float(standing)
    letter = _pose(region(rng), _uniform_yaw(rng), flag)
    return WorldState(_grasp(letter, relative_yaw), dict(extra(rng), letter=letter))


def _rotate_sampler(rng, extra, i):
    s = _holding_letter(rng, extra)
    g = s.pose(LETTER)
    g[YAW] = _uniform_yaw(rng)
    return s, {"G": normalize_pose(g)}


def _translate_sampler(targets):
    def sample(rng, extra, i):
        s = _holding_letter(rng, extra)
        g = s.pose(LETTER)
        g[:2] = targets[i % len(targets)](rng)
        return s, {"G": g}
    return sample


def _reset_sampler(relative_yaws=(0.0, 0.0, np.pi / 2)):
    """Robot holding the letter; grasp variants cycle with the demo index."""
    def sample(rng, extra, i):
        rel = relative_yaws[i % len(relative_yaws)]
        standing = 1 if rel != 0.0 else None
        return _holding_letter(rng, extra, standing=standing, relative_yaw=rel), {}
    return sample


def _reset_box_sampler(rng, extra, i):
    letter = _pose(_anywhere_xy(rng), _uniform_yaw(rng), rng.integers(2))
    box_xy = _staging_xy(rng) if i % 2 == 0 else _interior_xy(rng)
    box = _pose(box_xy, _uniform_yaw(rng), 0.0)
    return WorldState(_grasp(box), {LETTER: letter, BOX: box}), {}


def _no_extra(rng):
    return {}


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------

@dataclass
class TaskSuite:
    name: str
    objects: tuple
    specs: dict  # skill name -> SkillSpec
    transitions: dict  # skill name -> scripted transition
    samplers: dict  # skill name -> demo start sampler
    extra: Callable = _no_extra  # rng -> poses of objects a demo start does not set
    goal_mask: dict = field(default_factory=dict)
    problem_sampler: Callable = None

    @property
    def skill_names(self) -> list:
        return list(self.specs)

    def transition(self, name: str, s: WorldState, tp: dict) -> WorldState:
        try:
            fn = self.transitions[name]
        except KeyError:
            raise KeyError(f"skill {name!r} is not registered in suite {self.name!r}") from None
        return fn(s, tp)

    def sample_problem(self, rng) -> Problem:
        return self.problem_sampler(rng)

    def problems(self, n: int, seed: int) -> list:
        rng = np.random.default_rng(seed)
        return [self.sample_problem(rng) for _ in range(n)]


def _params(*names, free=None, prior_components=1):
    ents = {"A": LETTER, "R": ROBOT, "T": "table", "B": BOX}
    out = [TaskParamSpec(n, ents[n]) for n in names]
    if free is not None:
        entity, dims = free
        out.append(TaskParamSpec("G", entity, dims, prior_components))
    return tuple(out)


def _letter_pair(rng):
    while True:
        a, b = _interior_xy(rng), _interior_xy(rng)
        ya, yb = _uniform_yaw(rng), _uniform_yaw(rng)
        if np.linalg.norm(a - b) >= 0.2 and abs(wrap(ya - yb)) >= 0.6:
            return _pose(a, ya, rng.integers(2)), _pose(b, yb, rng.integers(2))


def _task_a_problem(rng) -> Problem:
    start, goal = _letter_pair(rng)
    mask = {LETTER: [True] * 4}
    return Problem(WorldState(HOME, {LETTER: start}), [WorldState(HOME, {LETTER: goal})], mask)


def task_a_suite() -> TaskSuite:
    specs = [
        SkillSpec("pick_standing", (LETTER,), _params("A", "R", "T")),
        SkillSpec("pick_side", (LETTER,), _params("A", "R", "T")),
        SkillSpec("pick_flat", (LETTER,), _params("A", "R", "T")),
        SkillSpec("reorient_st2fl", (LETTER,), _params("A", "R", "T")),
        SkillSpec("reorient_fl2st", (LETTER,), _params("A", "R", "T")),
        SkillSpec("rotate", (LETTER,), _params("A", "R", free=(LETTER, (YAW,)))),
        SkillSpec("translate", (LETTER,), _params("A", "R", free=(LETTER, (0, 1)), prior_components=2)),
        SkillSpec("reset", (LETTER,), _params("A", "R", "T")),
    ]
    transitions = {
        "pick_standing": _pick(LETTER),
        "pick_side": _pick(LETTER, np.pi / 2),
        "pick_flat": _pick(LETTER),
        "reorient_st2fl": _reorient(False, 0.0),
        "reorient_fl2st": _reorient(True, np.pi / 2),
        "rotate": _rotate,
        "translate": _translate(LETTER),
        "reset": _reset,
    }
    samplers = {
        "pick_standing": _home_with_letter(True),
        "pick_side": _home_with_letter(True, _edge_xy),
        "pick_flat": _home_with_letter(False),
        "reorient_st2fl": lambda rng, ex, i: (_holding_letter(rng, ex, _edge_xy, True, np.pi / 2), {}),
        "reorient_fl2st": lambda rng, ex, i: (_holding_letter(rng, ex, _edge_xy, False), {}),
        "rotate": _rotate_sampler,
        "translate": _translate_sampler([lambda r: _edge_xy(r, EDGE_Y), _interior_xy]),
        "reset": _reset_sampler(),
    }
    return TaskSuite("task_a", (LETTER,), {s.name: s for s in specs}, transitions, samplers,
                     goal_mask={LETTER: [True] * 4}, problem_sampler=_task_a_problem)


def _box_extra(rng):
    return {BOX: _pose(_interior_xy(rng), _uniform_yaw(rng), 0.0)}


def _staging_xy(rng):
    return rng.uniform(*STAGING, size=2)


def _on_box(rng, standing, relative_yaw):
    box = _pose(rng.uniform(0.85, 0.95, size=2), _uniform_yaw(rng), 0.0)
    letter = _pose(box[:2] + rng.uniform(-BOX_OFFSET, BOX_OFFSET, size=2), _uniform_yaw(rng), float(standing))
    return WorldState(_grasp(letter, relative_yaw), {LETTER: letter, BOX: box}), {}


def _box_pick_sampler(rng, extra, i):
    s = WorldState(HOME, {LETTER: _pose(_anywhere_xy(rng), _uniform_yaw(rng), rng.integers(2)),
                          BOX: _pose(_interior_xy(rng), _uniform_yaw(rng), 0.0)})
    return s, {}


def _box_translate_sampler():
    targets = [_staging_xy, _interior_xy]

    def sample(rng, extra, i):
        s, _ = _box_pick_sampler(rng, extra, i)
        s = s.with_pose(ROBOT, _grasp(s.pose(BOX)))
        g = s.pose(BOX)
        g[:2] = targets[i % 2](rng)
        return s, {"G": g}
    return sample


def _task_b_problem(rng) -> Problem:
    start, goal = _letter_pair(rng)
    while True:
        box = _pose(_interior_xy(rng), _uniform_yaw(rng), 0.0)
        if min(np.linalg.norm(box[:2] - start[:2]), np.linalg.norm(box[:2] - goal[:2])) >= 0.1:
            break
    mask = {LETTER: [True] * 4, BOX: [True, True, True, False]}
    return Problem(WorldState(HOME, {LETTER: start, BOX: box}), [WorldState(HOME, {LETTER: goal, BOX: box})], mask)


def task_b_suite() -> TaskSuite:
    both = (LETTER, BOX)
    specs = [
        SkillSpec("pick_standing", (LETTER,), _params("A", "R", "T")),
        SkillSpec("pick_flat", (LETTER,), _params("A", "R", "T")),
        SkillSpec("pick_box", both, _params("B", "R", "A")),
        SkillSpec("translate_box", both, _params("B", "R", "A", free=(BOX, (0, 1)), prior_components=2)),
        SkillSpec("reorient_st2fl_box", both, _params("A", "R", "B", "T")),
        SkillSpec("reorient_fl2st_box", both, _params("A", "R", "B", "T")),
        SkillSpec("rotate", (LETTER,), _params("A", "R", free=(LETTER, (YAW,)))),
        SkillSpec("translate", (LETTER,), _params("A", "R", free=(LETTER, (0, 1)), prior_components=2)),
        SkillSpec("reset", (LETTER,), _params("A", "R", "T")),
        SkillSpec("reset_box", both, _params("B", "R", "T", "A")),
    ]
    transitions = {
        "pick_standing": _pick(LETTER),
        "pick_flat": _pick(LETTER),
        "pick_box": _pick(BOX),
        "translate_box": _translate(BOX),
        "reorient_st2fl_box": _reorient(False, 0.0),
        "reorient_fl2st_box": _reorient(True, 0.0),
        "rotate": _rotate,
        "translate": _translate(LETTER),
        "reset": _reset,
        "reset_box": _reset,
    }
    samplers = {
        "pick_standing": _home_with_letter(True),
        "pick_flat": _home_with_letter(False),
        "pick_box": _box_pick_sampler,
        "translate_box": _box_translate_sampler(),
        "reorient_st2fl_box": lambda rng, ex, i: _on_box(rng, True, 0.0),
        "reorient_fl2st_box": lambda rng, ex, i: _on_box(rng, False, 0.0),
        "rotate": _rotate_sampler,
        "translate": _translate_sampler([_staging_xy, _interior_xy]),
        "reset": _reset_sampler((0.0,)),
        "reset_box": _reset_box_sampler,
    }
    return TaskSuite("task_b", both, {s.name: s for s in specs}, transitions, samplers, _box_extra,
                     goal_mask={LETTER: [True] * 4, BOX: [True, True, True, False]},
                     problem_sampler=_task_b_problem)


SUITES = {"task_a": task_a_suite, "task_b": task_b_suite}


def get_suite(name: str) -> TaskSuite:
    try:
        return SUITES[name]()
    except KeyError:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)}") from None


# ---------------------------------------------------------------------------
# demonstrations
# ---------------------------------------------------------------------------

def interpolate(s0: WorldState, s1: WorldState, T: int = DEMO_STEPS) -> np.ndarray:
    """Straight-line motion from s0 to s1 (shortest way round in yaw).

    The discrete channel switches on the last step.
    """
    a, b = s0.as_array(), s1.as_array()
    delta = b - a
    delta[:, YAW] = wrap(delta[:, YAW])
    alpha = np.linspace(0.0, 1.0, T)[:, None, None]
    out = a[None] + alpha * delta[None]
    out[:, :, YAW] = wrap(out[:, :, YAW])
    out[:-1, :, 3] = a[:, 3]
    out[-1, :, 3] = b[:, 3]
    return out


def generate_demos(suite: TaskSuite, skill: str, m: int, noise: float = 0.0, seed: int = 0) -> list:
    """``m`` scripted demonstrations of ``skill`` with Gaussian noise on x, y and yaw after t=0."""
    if m < 1:
        raise ValueError("m must be at least 1")
    if skill not in suite.samplers:
        raise KeyError(f"skill {skill!r} is not registered in suite {suite.name!r}")
    rng = np.random.default_rng(seed)
    sampler = suite.samplers[skill]
    demos = []
    for i in range(m):
        s0, free = sampler(rng, suite.extra, i)
        tp = dict(free)
        s1 = suite.transition(skill, s0, tp)
        states = interpolate(s0, s1)
        if noise > 0:
            jitter = rng.normal(0.0, noise, size=states[1:].shape) * CONTINUOUS
            states[1:] += jitter
            states[:, :, YAW] = wrap(states[:, :, YAW])
        demos.append(Demonstration(skill, s0.entities, states, free))
    return demos


# ---------------------------------------------------------------------------
# environment
# ---------------------------------------------------------------------------

class Environment:
    """Mutable world driven by the suite's scripted skills.

    ``noise`` is the standard deviation added to x, y and yaw of every entity
    a skill moves; ``perturbations`` maps a step index to a list of
    ``(entity, pose)`` overrides applied after that step; NaN coordinates in
    an override keep their current value.
    """

    def __init__(self, suite: TaskSuite, state: WorldState, noise: float = 0.0, perturbations=None, seed: int = 0):
        self.suite = suite
        self.state = state
        self.noise = float(noise)
        self.perturbations = {int(k): list(v) for k, v in (perturbations or {}).items()}
        self.rng = np.random.default_rng(seed)
        self.step_index = 0

    def observe(self) -> WorldState:
        return self.state

    def execute(self, skill: str, tp: dict, trajectory=None) -> WorldState:
        before = self.state
        after = self.suite.transition(skill, before, tp)
        if self.noise > 0:
            for e in after.entities:
                p = after.pose(e)
                if np.any(np.abs(p - before.pose(e)) > 1e-12):
                    p = p + self.rng.normal(0.0, self.noise, POSE_DIM) * CONTINUOUS
                    after = after.with_pose(e, p)
        for entity, pose in self.perturbations.get(self.step_index, ()):
            pose = np.asarray(pose, dtype=float)
            after = after.with_pose(entity, np.where(np.isnan(pose), after.pose(entity), pose))
        self.state = after
        self.step_index += 1
        return after


# ---------------------------------------------------------------------------
# witness plans
# ---------------------------------------------------------------------------

def _with_g(s, entity, xy=None, yaw=None):
    g = s.pose(entity)
    if xy is not None:
        g[:2] = xy
    if yaw is not None:
        g[YAW] = yaw
    return {"G": normalize_pose(g)}


def witness_plan(suite: TaskSuite, problem: Problem) -> list:
    """A hand-written skill sequence that solves ``problem`` with the scripted skills.

    Returns ``[(skill, free params), ...]``; free params are computed from the
    state reached so far, so the list is replayed with :func:`replay_witness`.
    """
    start, goal = problem.start.pose(LETTER), problem.goal.pose(LETTER)
    gxy, gyaw = goal[:2], goal[YAW]
    st0, st1 = start[3] > 0.5, goal[3] > 0.5
    pick = "pick_standing" if st0 else "pick_flat"
    finish = [("rotate", lambda s: _with_g(s, LETTER, yaw=gyaw)), ("translate", lambda s: _with_g(s, LETTER, xy=gxy))]
    if st0 == st1:
        return [(pick, None)] + finish
    if suite.name == "task_a":
        to_edge = ("translate", lambda s: _with_g(s, LETTER, xy=EDGE_POINT))
        if st0:
            return [(pick, None), to_edge, ("reset", None), ("pick_side", None), ("reorient_st2fl", None)] + finish
        return [(pick, None), to_edge, ("reorient_fl2st", None), ("reset", None), ("pick_standing", None)] + finish
    box0 = problem.start.pose(BOX)[:2]
    reorient = "reorient_st2fl_box" if st0 else "reorient_fl2st_box"
    return ([("pick_box", None), ("translate_box", lambda s: _with_g(s, BOX, xy=STAGING_POINT)), ("reset_box", None),
             (pick, None), ("translate", lambda s: _with_g(s, LETTER, xy=STAGING_POINT)), (reorient, None)]
            + finish + [("reset", None), ("pick_box", None), ("translate_box", lambda s: _with_g(s, BOX, xy=box0))])


def replay_witness(suite: TaskSuite, problem: Problem, plan) -> WorldState:
    s = problem.start
    for name, free in plan:
        tp = free(s) if free is not None else {}
        s = suite.transition(name, s, tp)
    return s


def witness_solves(suite: TaskSuite, problem: Problem) -> bool:
    final = replay_witness(suite, problem, witness_plan(suite, problem))
    return state_satisfies(final, problem.goal, problem.goal_mask)
