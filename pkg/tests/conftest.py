import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from trapwave.geometry import truncate  # noqa: E402
from trapwave.mesh import generate_mesh  # noqa: E402
from trapwave.scenarios import make_straight_strip  # noqa: E402

# criterion number -> (passed, detail), filled in by test_acceptance.py
ACCEPTANCE = {}


def record(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def strip_geometry():
    return make_straight_strip(1.0, 1.0)


@pytest.fixture(scope="session")
def strip_domain(strip_geometry):
    return truncate(strip_geometry, strip_geometry.R0 + 1.0)


@pytest.fixture(scope="session")
def strip_mesh(strip_domain):
    return generate_mesh(strip_domain, 0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
