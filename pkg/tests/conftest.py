import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, (verdict, detail) in sorted(acceptance.RESULTS.items(), key=lambda kv: _order(kv[0])):
        terminalreporter.write_line(f"{verdict}  {name}: {detail}")


def _order(name):
    digits = "".join(c for c in name.split("(")[0] if c.isdigit())
    return (int(digits or 0), name)
