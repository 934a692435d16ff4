from pathlib import Path

import numpy as np
import pytest

from dwr_adapt.mesh import load_mesh, unit_square

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "data"
CONFIGS = ROOT / "configs"


@pytest.fixture
def square2():
    """Unit square split into two triangles."""
    return unit_square(1)


@pytest.fixture(scope="session")
def artery_mesh():
    return load_mesh(DATA / "artery_proxy.mesh")


@pytest.fixture(scope="session")
def silicone_mesh():
    return load_mesh(DATA / "silicone_proxy.mesh")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed after the test summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
