import math

import numpy as np
import pytest

import clogsim
import dataio
import pce
import probmodel
from orthopoly import Recurrence, TensorBasis, hyperbolic_enumerate, stieltjes_from_density
from probmodel import InputModel, Marginal

ISHIGAMI_A = 7.0
ISHIGAMI_B = 0.1


def gaussian_model(d: int) -> InputModel:
    return InputModel(tuple((f"x{i + 1}", Marginal.gaussian(0.0, 1.0)) for i in range(d)))


def make_dataset(inputs, outputs, times=None, names=None, **extra) -> dataio.TrajectoryDataset:
    inputs = np.asarray(inputs, dtype=float)
    outputs = np.asarray(outputs, dtype=float)
    if outputs.ndim == 1:
        outputs = outputs[:, None]
    times = np.arange(outputs.shape[1], dtype=float) if times is None else np.asarray(times, dtype=float)
    names = tuple(names or (f"x{i + 1}" for i in range(inputs.shape[1])))
    return dataio.TrajectoryDataset(names=names, times=times, inputs=inputs, outputs=outputs, **extra)


def ishigami(X):
    X = np.atleast_2d(X)
    return (np.sin(X[:, 0]) + ISHIGAMI_A * np.sin(X[:, 1]) ** 2
            + ISHIGAMI_B * X[:, 2] ** 4 * np.sin(X[:, 0]))


@pytest.fixture(scope="session")
def preset_model():
    return probmodel.load_model()


@pytest.fixture(scope="session")
def default_config():
    return clogsim.load_config()


@pytest.fixture(scope="session")
def small_campaign(preset_model, default_config):
    schedule, constants, times = default_config
    return clogsim.monte_carlo(preset_model, schedule, constants, 120, seed=3, times=times)


@pytest.fixture(scope="session")
def legendre_basis():
    """Orthonormal Legendre family on Uniform(-pi, pi), degree 9 in 3 inputs."""
    alpha, beta = stieltjes_from_density(lambda z: 1.0 / (2.0 * math.pi), -math.pi, math.pi, 9)
    family = Recurrence(alpha=alpha, beta=beta)
    indices = np.array(hyperbolic_enumerate(3, 9, 1.0), dtype=int)
    return TensorBasis(recurrences=(family, family, family), indices=indices, p=9, q=1.0)


@pytest.fixture(scope="session")
def ishigami_fit(legendre_basis):
    rng = np.random.default_rng(0)
    train_x = rng.uniform(-math.pi, math.pi, size=(500, 3))
    test_x = rng.uniform(-math.pi, math.pi, size=(1000, 3))
    train = make_dataset(train_x, ishigami(train_x), times=[0.0])
    test = make_dataset(test_x, ishigami(test_x), times=[0.0])
    surrogate = pce.fit(train, basis=legendre_basis)
    return surrogate, test
