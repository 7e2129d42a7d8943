import numpy as np
import pytest

from bulksurface_ch.assembly import assemble_operators
from bulksurface_ch.geometry import generate_mesh

# criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def square4():
    mesh = generate_mesh("unit_square", 4)
    return mesh, assemble_operators(mesh)


@pytest.fixture(scope="session")
def disk3():
    mesh = generate_mesh("unit_disk", 3)
    return mesh, assemble_operators(mesh)


@pytest.fixture(scope="session")
def disk6():
    mesh = generate_mesh("unit_disk", 6)
    return mesh, assemble_operators(mesh)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        ok, detail = ACCEPTANCE_LINES[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
