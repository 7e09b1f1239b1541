import numpy as np
import pytest

from e3dtv.harness import gen_phantom

# (number, description, passed, detail) tuples filled in by test_acceptance
ACCEPTANCE_RESULTS = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def phantom():
    """The fixed-seed 32x32x16 rank-3 phantom used by the end-to-end checks."""
    return gen_phantom(32, 32, 16, rank=3, seed=0)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num, name, ok, detail in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:2d}. {name}: {detail}")
