"""Shared fixtures: seeded pipeline artifacts reused across test modules."""
from dataclasses import dataclass

import numpy as np
import pytest

from geotasknet import gtn as gtn_mod
from geotasknet import pipeline
from geotasknet.tamp import generate_dataset
from geotasknet.world import get_suite


@dataclass
class Artifacts:
    suite: object
    skills: dict
    dataset: object
    gtn: object
    valid: list
    seed: int


def _build(name: str, seed: int, n_train: int, n_valid: int) -> Artifacts:
    suite = get_suite(name)
    skills = pipeline.learn_suite_skills(suite, pipeline.PIPELINE_DEMOS, 0.0, seed)
    ds = generate_dataset(pipeline.train_problems(suite, n_train, seed), skills, pipeline.PIPELINE_SEARCH, seed)
    by_name = {m.name: m for m in skills}
    g = gtn_mod.learn(ds, by_name, seed)
    return Artifacts(suite, by_name, ds, g, pipeline.valid_problems(suite, n_valid, seed), seed)


@pytest.fixture(scope="session")
def task_a():
    return _build("task_a", 0, 40, 40)


@pytest.fixture(scope="session")
def task_b():
    return _build("task_b", 0, 40, 20)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

