import pytest

from dudornet.data import PhantomSpec, generate_phantom


@pytest.fixture(scope="session")
def phantom_pair():
    x_prior, x_full = generate_phantom(PhantomSpec(H=128, W=128, seed=11))
    return x_prior.data, x_full.data


@pytest.fixture(scope="session")
def small_phantom_pair():
    x_prior, x_full = generate_phantom(PhantomSpec(H=32, W=32, seed=5))
    return x_prior.data, x_full.data


ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(number, passed, detail)``."""
    def record(number, passed, detail):
        ACCEPTANCE[number] = (bool(passed), detail)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    order = lambda k: (int(str(k).rstrip("abcdefgh")), str(k))
    for number in sorted(ACCEPTANCE, key=order):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}")
