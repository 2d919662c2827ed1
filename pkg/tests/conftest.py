"""Shared fixtures and the acceptance-criterion reporter.

Each acceptance test records a one-line verdict; pytest prints the full
pass/fail table in its terminal summary.
"""

import math

import numpy as np
import pytest

from periflow.basis import TorusDomain
from periflow.diagnostics import estimate_embedding_constants

_CRITERIA = []


def record_criterion(number: int, description: str, ok: bool, detail: str = ""):
    _CRITERIA.append((number, description, bool(ok), detail))
    assert ok, f"criterion {number} ({description}) failed: {detail}"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number, description, ok, detail in sorted(_CRITERIA):
        status = "PASS" if ok else "FAIL"
        line = f"[criterion {number:2d}] {status}  {description}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def torus2_small():
    return TorusDomain(dimension=2, side_length=2.0 * math.pi, mode_cutoff=2)


@pytest.fixture(scope="session")
def torus2_n4():
    return TorusDomain(dimension=2, side_length=2.0 * math.pi, mode_cutoff=4)


@pytest.fixture(scope="session")
def torus3_small():
    return TorusDomain(dimension=3, side_length=2.0 * math.pi, mode_cutoff=2)


_CONSTS_CACHE = {}


@pytest.fixture(scope="session")
def constants_for():
    """Memoized embedding-constant estimates keyed by (domain, q)."""

    def get(domain: TorusDomain, q: float, budget: int = 200, seed: int = 0):
        key = (domain, q, budget, seed)
        if key not in _CONSTS_CACHE:
            _CONSTS_CACHE[key] = estimate_embedding_constants(
                domain, q, budget, seed=seed)
        return _CONSTS_CACHE[key]

    return get


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
