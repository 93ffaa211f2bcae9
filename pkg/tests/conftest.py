from __future__ import annotations

import numpy as np
import pytest

from sobolmap.campbell2d import MARGINALS, Campbell2D, Campbell2DGrid
from sobolmap.designs import lhs, maximin_lhs, scale
from sobolmap.field import FieldEnsemble


def campbell_ensemble(n: int, seed: int, grid: Campbell2DGrid | None = None, maximin: bool = False) -> FieldEnsemble:
    grid = grid or Campbell2DGrid()
    make = maximin_lhs if maximin else lhs
    design = make(n, 8, seed=seed, marginals=MARGINALS)
    return FieldEnsemble(design, Campbell2D(grid)(scale(design)), (-90.0, 90.0), (-90.0, 90.0))


@pytest.fixture(scope="session")
def small_grid():
    return Campbell2DGrid(16, 16)


@pytest.fixture(scope="session")
def small_train(small_grid):
    return campbell_ensemble(60, 11, small_grid, maximin=True)


@pytest.fixture(scope="session")
def small_test(small_grid):
    return campbell_ensemble(200, 12, small_grid)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance reporting ------------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    """Store one acceptance verdict; printed in the terminal summary."""
    ACCEPTANCE[criterion] = (bool(ok), detail)
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} | {detail}", flush=True)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'} | {detail}")
