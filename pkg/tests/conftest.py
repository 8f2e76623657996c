"""Shared fixtures and the acceptance-summary hook."""

from __future__ import annotations

import numpy as np
import pytest

from consur import (Design, ExcursionProblem, IntegrationGrid, KernelSpec,
                    fit_posterior)

# populated by tests/test_acceptance.py; printed in the terminal summary
ACCEPTANCE_RESULTS: dict[int, str] = {}


def record_acceptance(number: int, line: str) -> None:
    ACCEPTANCE_RESULTS[number] = line


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[number])


@pytest.fixture
def kernel2d():
    return KernelSpec("matern32", np.array([0.4, 0.3]), 1.5)


@pytest.fixture
def design2d():
    rng = np.random.default_rng(42)
    pts = rng.uniform(0.0, 1.0, size=(6, 2))
    vals = np.sin(3 * pts[:, 0]) + pts[:, 1]
    return Design(pts, vals, 0.0)


@pytest.fixture
def post2d(kernel2d, design2d):
    return fit_posterior(kernel2d, design2d, mean_value=0.5)


@pytest.fixture
def unit_box2d():
    return np.array([[0.0, 1.0], [0.0, 1.0]])


@pytest.fixture
def problem2d(unit_box2d):
    grid = IntegrationGrid.sobol(unit_box2d, 256)
    return ExcursionProblem(0.8, "above", 0.95, unit_box2d, grid)
