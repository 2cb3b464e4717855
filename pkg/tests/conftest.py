import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("ecpic", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ecpic")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def make_plasma(seed, n=64, mesh=None, vth=0.3, drift=0.0):
    """Random neutral electron-ion plasma with Gauss-consistent initial field."""
    from ecpic.grid import Mesh1D
    from ecpic.particles import Particles
    from ecpic.scenario import gauss_field
    from ecpic.solver import SystemState
    mesh = mesh or Mesh1D(16, 0.2)
    rng = np.random.default_rng(seed)
    x = np.concatenate([rng.uniform(0, mesh.length, n), rng.uniform(0, mesh.length, n)])
    v = np.concatenate([rng.normal(0, vth, (n, 3)), rng.normal(0, 0.01, (n, 3))])
    v[n:, 0] += drift
    w = mesh.length / n
    q = np.concatenate([np.full(n, -w), np.full(n, w)])
    m = np.concatenate([np.full(n, w), np.full(n, 100 * w)])
    p = Particles(x, v, q, m, np.repeat([0, 1], n))
    return SystemState(p, gauss_field(p, mesh), mesh)


ACCEPTANCE = []


def report(criterion, passed, detail):
    """Record one acceptance line; printed again in the terminal summary."""
    line = f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
