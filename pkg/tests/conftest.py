"""Shared fixtures: small networks, toy problems and a cached sine MAP."""

from __future__ import annotations

import numpy as np
import pytest

from tubelaplace import (BernoulliLogit, Dataset, GaussianRegression, PriorSpec, gen_sine, make_mlp, polish_map,
                         train_map)
from tubelaplace.experiment import resolve_config, run_experiment


def rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


@pytest.fixture
def small_reg():
    """2-5-1 tanh net away from its init over 20 random points."""
    r = rng(1)
    X = r.standard_normal((20, 2))
    y = np.sin(X.sum(axis=1, keepdims=True)) + 0.1 * r.standard_normal((20, 1))
    model = make_mlp((2, 5, 1), GaussianRegression(0.1), seed=3)
    model = model.with_theta(model.theta + 0.3 * r.standard_normal(model.num_params))
    return model, Dataset(X, y, "regression"), PriorSpec(0.5)


@pytest.fixture
def small_clf():
    r = rng(2)
    X = r.standard_normal((30, 2))
    y = (X[:, 0] * X[:, 1] > 0).astype(int)
    model = make_mlp((2, 4, 1), BernoulliLogit(), seed=4)
    return model, Dataset(X, y, "classification"), PriorSpec(0.7)


@pytest.fixture
def linear_reg():
    """One-layer (linear) model with a Gaussian head."""
    r = rng(5)
    X = r.standard_normal((25, 3))
    y = (X @ np.array([1.0, -2.0, 0.5]) + 0.3 + 0.2 * r.standard_normal(25))[:, None]
    model = make_mlp((3, 1), GaussianRegression(0.2), seed=6)
    return model, Dataset(X, y, "regression"), PriorSpec(2.0)


@pytest.fixture(scope="session")
def sine_map():
    """Sine MAP with the experiment recipe (Adam then L-BFGS), lambda = 1."""
    data = gen_sine(50, 0.1, (-6.0, 6.0), seed=0)
    prior = PriorSpec(1.0)
    model = train_map(make_mlp((1, 50, 50, 1), GaussianRegression(0.1), seed=0), data, prior, 200, 1e-2)
    return polish_map(model, data, prior), data, prior


@pytest.fixture(scope="session")
def sine_adam():
    """Sine network after the Adam phase only."""
    data = gen_sine(50, 0.1, (-6.0, 6.0), seed=0)
    prior = PriorSpec(1.0)
    model = train_map(make_mlp((1, 50, 50, 1), GaussianRegression(0.1), seed=0), data, prior, 200, 1e-2)
    return model, data, prior


@pytest.fixture(scope="session")
def sine_run():
    return run_experiment(resolve_config({"task": "sine"}))


@pytest.fixture(scope="session")
def moons_run():
    return run_experiment(resolve_config({"task": "two_moons"}))


def by_method(result, split="test"):
    return {r.method: r for r in result["reports"] if r.split == split}
