import numpy as np
import pytest

from hmdbench.trace import CounterTrace, PayloadInterval, PayloadKind


def random_trace(n=400, channels=6, seed=0, period=1.0, intervals=()):
    rng = np.random.default_rng(seed)
    names = tuple(f"c{i}" for i in range(channels))
    return CounterTrace(rng.gamma(2.0, 3.0, (n, channels)), period, names, "app", tuple(intervals))


@pytest.fixture
def trace():
    return random_trace()


@pytest.fixture
def labeled_trace():
    iv = PayloadInterval(100.0, 250.0, PayloadKind.SmsSteal, "SmsSteal-s1-Z")
    return random_trace(intervals=(iv,))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
