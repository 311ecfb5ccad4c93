import os

import pytest
from hypothesis import HealthCheck, settings

from mgrub.model import FixedExec, ServerParams, TaskSpec, UniformExec

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

MS = 1_000_000


def server(id, Q, P):
    return ServerParams(id=id, period_P=P, max_budget_Q=Q)


def periodic(id, T, c, lo=None):
    em = FixedExec(c) if lo is None else UniformExec(lo, c)
    return TaskSpec(id=id, period_T=T, exec_model=em)


@pytest.fixture
def pair():
    """Two identical half-bandwidth reservations."""
    return [server(0, 5, 10), server(1, 5, 10)]
