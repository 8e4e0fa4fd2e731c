from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from anosovlab.torus_maps import FourierMode, PerturbedMap  # noqa: E402
from oracles import CAT, T3  # noqa: E402

T3_MODES = (
    FourierMode((1, 0, 0), (0.3, -0.2, 0.5), "sin"),
    FourierMode((0, 1, 1), (0.1, 0.4, -0.3), "cos"),
    FourierMode((1, -1, 0), (-0.2, 0.1, 0.2), "sin"),
)
CAT_MODES = (
    FourierMode((1, 0), (0.5, 0.3), "sin"),
    FourierMode((1, 1), (0.2, -0.1), "cos"),
)
CONFIGS = Path(__file__).parent.parent / "configs"


def t3_map(eps: float = 1e-3) -> PerturbedMap:
    return PerturbedMap(PerturbedMap.linear_map(T3).linear, T3_MODES, eps)


def cat_map(eps: float = 1e-3) -> PerturbedMap:
    return PerturbedMap(PerturbedMap.linear_map(CAT).linear, CAT_MODES, eps)


@pytest.fixture(scope="session")
def t3():
    return t3_map()


@pytest.fixture(scope="session")
def t3_linear():
    return PerturbedMap.linear_map(T3)


@pytest.fixture(scope="session")
def cat():
    return cat_map()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
