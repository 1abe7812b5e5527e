import random

import pytest
from hypothesis import HealthCheck, settings

from tokenfare import blindsig
from tokenfare.deploy import Stack

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def params64():
    return blindsig.generate_group(64, random.Random(64))


@pytest.fixture(scope="session")
def key64(params64):
    return blindsig.keygen(params64, random.Random(65))


@pytest.fixture
def stack():
    with Stack(bits=64, rng=random.Random(7)) as s:
        yield s


@pytest.fixture
def make_stack():
    stacks = []

    def make(**kwargs):
        kwargs.setdefault("bits", 64)
        s = Stack(**kwargs)
        stacks.append(s)
        return s

    yield make
    for s in stacks:
        s.close()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
