import numpy as np
import pytest

from zdshape.mechanism import DesignParams
from zdshape.scenario import default_scenario
from zdshape.stabilizer import synthesize
from zdshape.zero_dynamics import extract_orbit, find_equilibrium

P_REF = DesignParams(0.12, 0.0)


@pytest.fixture(scope="session")
def scenario():
    return default_scenario()


@pytest.fixture(scope="session")
def inst(scenario):
    return scenario.instance


@pytest.fixture(scope="session")
def basis(scenario):
    return scenario.basis


@pytest.fixture(scope="session")
def model(basis):
    return basis.model(P_REF)


@pytest.fixture(scope="session")
def orbit(model, scenario):
    x_eq, _ = find_equilibrium(model, x_ref=scenario.reference.x_c)
    return extract_orbit(model, float(scenario.reference.r_x(0.0)), x_eq)


@pytest.fixture(scope="session")
def synthesis(model, orbit):
    return synthesize(model, orbit)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_task_states(scenario, rng, n, speed=0.3):
    """Task-space states inside the tabulation domain, near the reference line."""
    lo, hi = scenario.domain
    x = rng.uniform(lo + 0.005, hi - 0.005, n)
    y = scenario.reference.r_y + rng.uniform(-0.01, 0.01, n)
    v = rng.uniform(-speed, speed, (n, 2))
    return np.column_stack([x, y]), v

