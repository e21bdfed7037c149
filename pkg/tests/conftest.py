import numpy as np
import pytest

from membrane_lab.model import MembraneDensity, make_field


@pytest.fixture
def bm_field():
    """One-dimensional Brownian motion without membrane effects."""
    return make_field([[1.0]], [0.0], 0.0, [], 0.0, dim_y=0)


@pytest.fixture
def unit_density():
    return MembraneDensity.constant(1.0)


def normal_se(sd: float, n: int) -> float:
    return sd / np.sqrt(n)


def make_exp(beta=0.0, gamma=0.0, b=0.0, eps=0.2, delta=None, lam=0.0, n_paths=2000, seed=1,
             scheme="euler", horizon=1.0, grid_points=11, density=1.0, extra=""):
    """A one-dimensional experiment assembled from TOML text."""
    from membrane_lab.config import parse_experiment

    delta = eps if delta is None else delta
    text = f"""
[coefficients]
sigma = [[1.0]]
b = [{b}]
beta = {beta}
gamma = {gamma}

[membranes]
density = {density}

[scaling]
epsilon = {eps}
delta = {delta}
lambda = {lam}

[simulation]
horizon = {horizon}
n_paths = {n_paths}
seed = {seed}
scheme = "{scheme}"
grid_points = {grid_points}
{extra}
"""
    return parse_experiment(text, "test.toml")
