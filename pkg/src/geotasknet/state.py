"""World states, problems, plans and demonstrations."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import POSE_DIM, YAW, normalize_pose, wrap

ROBOT = "robot"
TABLE = "table"

# Per-coordinate tolerance for x, y, yaw and the discrete channel.
STATE_TOL = np.array([0.05, 0.05, 0.1, 0.5])


def _pose(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (POSE_DIM,):
        raise ValueError(f"poses have {POSE_DIM} coordinates, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("pose contains non-finite values")
    return normalize_pose(v)


@dataclass(frozen=True, eq=False)
class WorldState:
    """Robot pose plus object poses; ``table`` is an implicit static entity at the origin."""

    robot: np.ndarray
    objects: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "robot", _pose(self.robot))
        objs = {str(k): _pose(v) for k, v in sorted(dict(self.objects).items())}
        if ROBOT in objs or TABLE in objs:
            raise ValueError("object ids 'robot' and 'table' are reserved")
        object.__setattr__(self, "objects", objs)

    @property
    def entities(self) -> tuple:
        return (ROBOT,) + tuple(self.objects)

    def pose(self, entity: str) -> np.ndarray:
        if entity == ROBOT:
            return self.robot.copy()
        if entity == TABLE:
            return np.zeros(POSE_DIM)
        try:
            return self.objects[entity].copy()
        except KeyError:
            raise KeyError(f"unknown entity {entity!r}") from None

    def with_pose(self, entity: str, pose) -> "WorldState":
        if entity == ROBOT:
            return WorldState(pose, self.objects)
        if entity not in self.objects:
            raise KeyError(f"unknown entity {entity!r}")
        objs = dict(self.objects)
        objs[entity] = pose
        return WorldState(self.robot, objs)

    def as_array(self) -> np.ndarray:
        return np.stack([self.pose(e) for e in self.entities])

    def to_dict(self) -> dict:
        return {"robot": self.robot.tolist(), "objects": {k: v.tolist() for k, v in self.objects.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "WorldState":
        return cls(d["robot"], d.get("objects", {}))

    def __repr__(self):
        objs = ", ".join(f"{k}={np.round(v, 3).tolist()}" for k, v in self.objects.items())
        return f"WorldState(robot={np.round(self.robot, 3).tolist()}, {objs})"


def state_satisfies(s: WorldState, goal: WorldState, mask: dict, tol=STATE_TOL) -> bool:
    """True when every masked coordinate of ``s`` is within ``tol`` of ``goal``.

    ``mask`` maps entity id to four booleans. Yaw is compared on the circle.
    """
    tol = np.broadcast_to(np.asarray(tol, dtype=float), (POSE_DIM,))
    for entity, m in mask.items():
        m = np.asarray(m, dtype=bool)
        if not m.any():
            continue
        diff = np.abs(s.pose(entity) - goal.pose(entity))
        diff[YAW] = abs(wrap(diff[YAW]))
        if np.any(diff[m] > tol[m]):
            return False
    return True


def state_key(s: WorldState, tol=STATE_TOL) -> tuple:
    """Quantized identity used to merge nearby search states."""
    arr = s.as_array().copy()
    arr[:, YAW] = wrap(arr[:, YAW])
    q = np.round(arr / np.asarray(tol)).astype(np.int64)
    # +pi and -pi land in the same yaw bin
    nbins = int(round(2 * np.pi / tol[YAW]))
    q[:, YAW] = np.mod(q[:, YAW], nbins)
    return tuple(q.ravel().tolist())


@dataclass(frozen=True, eq=False)
class Problem:
    start: WorldState
    goals: tuple
    goal_mask: dict

    def __post_init__(self):
        goals = tuple(self.goals)
        if not goals:
            raise ValueError("a problem needs at least one goal state")
        mask = {k: np.asarray(v, dtype=bool) for k, v in sorted(dict(self.goal_mask).items())}
        for k, v in mask.items():
            if v.shape != (POSE_DIM,):
                raise ValueError(f"goal mask for {k!r} must have {POSE_DIM} flags")
        object.__setattr__(self, "goals", goals)
        object.__setattr__(self, "goal_mask", mask)

    @property
    def goal(self) -> WorldState:
        return self.goals[0]

    def satisfied_by(self, s: WorldState, tol=STATE_TOL):
        """Index of the first satisfied goal, or None."""
        for i, g in enumerate(self.goals):
            if state_satisfies(s, g, self.goal_mask, tol):
                return i
        return None

    def to_dict(self) -> dict:
        return {
            "start": self.start.to_dict(),
            "goals": [g.to_dict() for g in self.goals],
            "goal_mask": {k: v.astype(int).tolist() for k, v in self.goal_mask.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Problem":
        return cls(WorldState.from_dict(d["start"]), [WorldState.from_dict(g) for g in d["goals"]],
                   d["goal_mask"])


def params_to_dict(tp: dict) -> dict:
    return {k: np.asarray(v, dtype=float).tolist() for k, v in sorted(tp.items())}


def params_from_dict(d: dict) -> dict:
    return {k: np.asarray(v, dtype=float) for k, v in d.items()}


@dataclass(frozen=True, eq=False)
class PlanStep:
    state: WorldState
    skill: str
    params: dict
    next_state: WorldState

    def to_dict(self) -> dict:
        return {"state": self.state.to_dict(), "skill": self.skill, "params": params_to_dict(self.params),
                "next_state": self.next_state.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "PlanStep":
        return cls(WorldState.from_dict(d["state"]), d["skill"], params_from_dict(d["params"]),
                   WorldState.from_dict(d["next_state"]))


@dataclass(frozen=True, eq=False)
class Plan:
    problem: Problem
    steps: tuple
    cost: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))

    def discrete(self) -> tuple:
        return tuple(st.skill for st in self.steps)

    @property
    def final_state(self) -> WorldState:
        return self.steps[-1].next_state if self.steps else self.problem.start

    def __len__(self):
        return len(self.steps)

    def to_dict(self) -> dict:
        return {"problem": self.problem.to_dict(), "steps": [s.to_dict() for s in self.steps],
                "cost": float(self.cost)}

    @classmethod
    def from_dict(cls, d: dict) -> "Plan":
        return cls(Problem.from_dict(d["problem"]), [PlanStep.from_dict(s) for s in d["steps"]],
                   d.get("cost", 0.0))


@dataclass
class PlanDataset:
    plans: list = field(default_factory=list)
    failures: list = field(default_factory=list)  # (problem index, message)

    def __len__(self):
        return len(self.plans)

    def discrete_plans(self) -> list:
        return [p.discrete() for p in self.plans]


@dataclass(frozen=True, eq=False)
class Demonstration:
    """A timed demonstration: ``states[t, e]`` is the pose of ``entities[e]`` at step t.

    ``free_params`` holds the full pose of every free task parameter chosen
    by the demonstrator; bound parameters come from the initial state.
    """

    skill: str
    entities: tuple
    states: np.ndarray
    free_params: dict = field(default_factory=dict)

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        ents = tuple(self.entities)
        if states.ndim != 3 or states.shape[1:] != (len(ents), POSE_DIM):
            raise ValueError("demonstration states must be shaped (T, n_entities, 4)")
        if states.shape[0] < 2:
            raise ValueError("a demonstration needs at least two timesteps")
        if ents[0] != ROBOT:
            raise ValueError("the first demonstration entity must be the robot")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "entities", ents)
        object.__setattr__(self, "free_params", {k: np.asarray(v, dtype=float)
                                                 for k, v in sorted(self.free_params.items())})

    @property
    def length(self) -> int:
        return self.states.shape[0]

    def state_at(self, t: int) -> WorldState:
        objs = {e: self.states[t, i] for i, e in enumerate(self.entities) if e != ROBOT}
        return WorldState(self.states[t, 0], objs)

    def track(self, entity: str) -> np.ndarray:
        return self.states[:, self.entities.index(entity)]

    def to_dict(self) -> dict:
        return {"skill": self.skill, "entities": list(self.entities), "states": self.states.tolist(),
                "free_params": params_to_dict(self.free_params)}

    @classmethod
    def from_dict(cls, d: dict) -> "Demonstration":
        return cls(d["skill"], d["entities"], d["states"], params_from_dict(d.get("free_params", {})))
