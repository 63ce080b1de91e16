import json
import pathlib

import numpy as np
import pytest

from gravdrop.eos import EquationOfState
from gravdrop.grid import BallGrid
from gravdrop.smoothing import TangentialSmoother

DATA = pathlib.Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def reference():
    with open(DATA / "reference.json") as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def small_grid():
    return BallGrid(12, 8)


@pytest.fixture(scope="session")
def grid():
    return BallGrid(24, 15)


@pytest.fixture(scope="session")
def eos():
    return EquationOfState(20.0, 1.0)


@pytest.fixture(scope="session")
def smoother(small_grid):
    return TangentialSmoother(small_grid, 0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_ball(rng, n):
    p = rng.standard_normal((3, n))
    return p / np.linalg.norm(p, axis=0) * rng.random(n) ** (1 / 3)


def band_limited(grid, rng, l_max=4, radial=4):
    """Random smooth scalar field: sum of low-degree polynomials times exp."""
    y = grid.points
    c = rng.standard_normal((radial, 3))
    out = np.zeros(grid.shape)
    for k in range(radial):
        out += rng.standard_normal() * np.cos(c[k] @ y.reshape(3, -1)).reshape(grid.shape)
    return out


def small_problem(sign="attractive", eps=0.1):
    """Coarse problem for fast evolution tests."""
    from gravdrop.evolution import Problem
    from gravdrop.wave import build_basis

    g = BallGrid(12, 6)
    sm = TangentialSmoother(g, eps, chart_resolution=48)
    return Problem(g, EquationOfState(20.0), sm, build_basis(4, 4), sign)


def breathing_velocity(grid, amplitude=0.02):
    y = grid.points
    r = np.linalg.norm(y, axis=0)
    return amplitude * y * (1 - r**2) ** 4


# -- acceptance summary ----------------------------------------------------------
ACCEPTANCE_LINES: list = []


def report_acceptance(number: int, name: str, passed: bool, detail: str) -> None:
    """Record and print one PASS/FAIL acceptance line."""
    line = f"{'PASS' if passed else 'FAIL'} criterion {number:2d} ({name}): {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
