import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=25, deadline=None, derandomize=True)
settings.load_profile("default")

from sttomo.acceptance import constructed_pair  # noqa: E402
from sttomo.metric import SpatialDomain, random_bump_metric  # noqa: E402


@pytest.fixture(scope="session")
def domain():
    return SpatialDomain(2)


@pytest.fixture(scope="session")
def bump(domain):
    return random_bump_metric(domain, 1e-2, seed=1)


@pytest.fixture(scope="session")
def special_pair(domain):
    """``(g1, Psi^* g1, Psi)`` with ``g1`` in special form."""
    return constructed_pair(domain, 1e-2, seed=0)


@pytest.fixture(scope="session")
def general_pair(domain):
    return constructed_pair(domain, 1e-2, seed=0, special_form=False)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance verdicts, one line per criterion, after the run."""
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: s.split("criterion")[1]):
            terminalreporter.write_line(line)
