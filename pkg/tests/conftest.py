import dataclasses
import warnings

import numpy as np
import pytest

from ddsmpc.benchmarks.plants import two_mass_spring_spec
from ddsmpc.control import DRMPC, RMPC, SSMPC
from ddsmpc.scenarios import Ar1Params, estimate_moments, generate_ar1, lift

# benchmark disturbance level; the printed plant is infeasible at larger std
BENCH_AR = Ar1Params(rho=0.6, stationary_std=0.005)


@pytest.fixture(autouse=True)
def _quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


def tms_spec(H=5, seed=0, n=1000, ar=BENCH_AR):
    spec = two_mass_spring_spec(H)
    pool = generate_ar1(dataclasses.replace(ar, seed=10_000 + seed), n, H)
    return dataclasses.replace(spec, moments=estimate_moments(lift(pool, spec.saturation)))


def draw(n, H=5, seed=0, ar=BENCH_AR):
    return generate_ar1(dataclasses.replace(ar, seed=seed), n, H)


@pytest.fixture(scope="session")
def spec5():
    return tms_spec(5)


@pytest.fixture(scope="session")
def drmpc5(spec5):
    return DRMPC(spec5).fit(draw(300, seed=1), draw(59, seed=2))


@pytest.fixture(scope="session")
def rmpc5(spec5):
    ctl = RMPC(spec5)
    return ctl.fit(draw(ctl.required_scenarios(), seed=3))


@pytest.fixture(scope="session")
def ssmpc5(spec5):
    ctl = SSMPC(spec5)
    return ctl.fit(draw(ctl.required_scenarios(), seed=4))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# PASS/FAIL lines from the acceptance module, repeated in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
