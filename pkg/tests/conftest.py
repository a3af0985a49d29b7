import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from twophase.data import DesignSpec, TwoPhaseSample  # noqa: E402
from twophase.sampling import RngStreams, simulate_sample  # noqa: E402

_RESULTS = "acceptance_results"


def pytest_configure(config):
    setattr(config, _RESULTS, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, _RESULTS, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)


@pytest.fixture
def record_criterion(request):
    """Record one pass/fail line; printed in the terminal summary."""
    store = getattr(request.config, _RESULTS)

    def record(name, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} {name}: {detail}"
        store.append(line)
        print(line)
        return passed

    return record


def complete_sample(y, delta, x, u=None):
    """Full-sampling (pi0 = 1) sample with one stratum."""
    y = np.asarray(y, float)
    n = len(y)
    u = np.zeros((n, 1)) if u is None else u
    x = np.asarray(x, float).reshape(n, -1)
    return TwoPhaseSample.from_arrays(y, delta, u, np.ones(n, int), np.ones(n, int), x, 1,
                                      x_complete=x)


def toy_sample(seed, N=400, p=(0.8, 0.25), design="wor", cuts=(0.5,), noise=0.3):
    """Right-censored simulated two-phase sample stratified on u."""
    rng = np.random.default_rng(seed)
    x = rng.random(N)
    t = rng.exponential(size=N) / np.exp(x)
    c = np.where(rng.random(N) < 0.3, 3.0, 3.0 * rng.random(N))
    y = np.minimum(t, c)
    d = (t <= c).astype(int)
    u = (x + noise * rng.standard_normal(N))[:, None]
    spec = DesignSpec.cut_on_u(list(cuts), list(p), design=design)
    return simulate_sample(y, d, u, x[:, None], spec, RngStreams(seed))


@pytest.fixture
def sample_factory():
    return toy_sample
