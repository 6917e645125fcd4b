import numpy as np
import pytest

from regdirichlet.pathkit import brownian_ensemble, make_grid

# acceptance verdicts collected by tests/test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def small_grid():
    return make_grid(0.0, 1.0, 2000)


@pytest.fixture(scope="session")
def small_W(small_grid):
    return brownian_ensemble(small_grid, 1, 100, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.split(".")[0]), k)):
        ok, text = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'} {text}")
