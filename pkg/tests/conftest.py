import numpy as np
import pytest

from drax.core import RngHandle

ACCEPTANCE: dict = {}


@pytest.fixture
def gen():
    return RngHandle(1234, 99).generator()


def random_target(d, L, seed, alpha=1.0):
    from drax.core import SeqDistribution

    g = np.random.default_rng(seed)
    return SeqDistribution(d, L, g.dirichlet(np.full(d**L, alpha)))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
