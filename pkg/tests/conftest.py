"""Shared fixtures: standard parameters, delay presets and cached optima."""

from functools import lru_cache

import pytest

from hiv_delay_control.config import Scenario
from hiv_delay_control.model_core import InitialData, ModelParams
from hiv_delay_control.optimal_control import Optimum, solve_iop


def case_params(case: int, w: float = 1.0, **overrides: float) -> ModelParams:
    tau, xi = Scenario.from_flag(case).delays
    return ModelParams(tau=tau, xi=xi, w=w, **overrides)


@lru_cache(maxsize=None)
def iop_optimum(case: int, w: float = 1.0) -> Optimum:
    """IOP solutions are reused across test modules"""
    return solve_iop(case_params(case, w), case=f"case{case}")


@pytest.fixture
def params() -> ModelParams:
    return ModelParams()


@pytest.fixture
def init() -> InitialData:
    return InitialData()


@pytest.fixture
def case1() -> ModelParams:
    return case_params(1)


@pytest.fixture
def case3() -> ModelParams:
    return case_params(3)


@pytest.fixture
def subcritical() -> ModelParams:
    """r shrunk 200x so that R0 = 0.56"""
    return ModelParams(r=0.0014 / 200)


@pytest.fixture
def between_thresholds() -> ModelParams:
    """1 < R0 < 1 + R1: E1 exists and is stable, E2 is absent"""
    return ModelParams(r=0.0014 / 20, n=3.0)
