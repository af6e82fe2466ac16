import numpy as np
import pytest

from smoothmix import Grid, GridDensity, KernelSpec, MixtureModel


def random_model(rng, K, J, m=64, lo=-3.0, hi=3.0, h=0.4):
    """Model with random positive densities and a random simplex point."""
    grids = tuple(Grid(lo, hi, m) for _ in range(J))
    values = rng.gamma(2.0, size=(K, J, m)) + 0.05
    for j, g in enumerate(grids):
        values[:, j] /= (values[:, j] @ g.weights)[:, None]
    pi = rng.dirichlet(np.ones(K))
    return MixtureModel(pi, grids, values, KernelSpec(h))


def gaussian_bump(grid, mu, sd):
    return GridDensity.from_function(grid, lambda x: np.exp(-0.5 * ((x - mu) / sd) ** 2))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
