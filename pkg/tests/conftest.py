import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from safeops.env import diamond_instance, diamond_space, lower_bound_instances

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def diamond():
    return diamond_instance(200, seed=0)


@pytest.fixture
def dspace():
    return diamond_space()


@pytest.fixture
def i2():
    return lower_bound_instances(128, 0.1)[1]


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
