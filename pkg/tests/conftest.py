"""Shared fixtures: a small wireless deployment, a synthetic logistic
problem, and a quadratic plug-in problem with a closed-form optimum."""

import numpy as np
import pytest

from ncota_sim.channel import build_deployment
from ncota_sim.problem import synthesize_dataset


class QuadraticProblem:
    """Test-only plug-in: f_i(w) = mu/2 * ||w - c_i||^2 over a ball.

    Duck-types the pieces of ProblemSpec the simulator and solver touch;
    the unconstrained optimum is the centroid mean, so trajectories can
    be checked against a closed form.
    """

    def __init__(self, centers, radius, mu=1.0):
        self.centers = np.asarray(centers, dtype=float)
        self.radius = float(radius)
        self.mu = float(mu)
        self.smoothness = float(mu)

    @property
    def n(self):
        return self.centers.shape[0]

    @property
    def d(self):
        return self.centers.shape[1]

    def local_loss(self, w, i):
        diff = np.asarray(w, dtype=float) - self.centers[i]
        return 0.5 * self.mu * float(diff @ diff)

    def local_grad(self, w, i):
        return self.mu * (np.asarray(w, dtype=float) - self.centers[i])

    def grad_matrix(self, iterates):
        return self.mu * (iterates - self.centers)

    def global_loss(self, w):
        return float(np.mean([self.local_loss(w, i) for i in range(self.n)]))

    def global_grad(self, w):
        return self.mu * (np.asarray(w, dtype=float) - self.centers.mean(axis=0))

    def classification_error(self, w):
        return float("nan")


@pytest.fixture(scope="session")
def small_dep():
    """Five nodes on a 500 m disc with the default radio constants."""
    return build_deployment(5, 500.0, seed=11)


@pytest.fixture(scope="session")
def small_problem():
    """Synthetic 5-node, 4-dimensional logistic problem."""
    return synthesize_dataset(5, 4, seed=2)


@pytest.fixture()
def quad_problem(small_dep):
    rng = np.random.default_rng(123)
    centers = 0.3 * rng.standard_normal((small_dep.n, 3))
    return QuadraticProblem(centers, radius=1.0)
