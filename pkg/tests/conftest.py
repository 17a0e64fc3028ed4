"""Shared fixtures: the expensive trained solutions are session-scoped and
reused by both the module tests and the acceptance suite."""

from __future__ import annotations

import numpy as np
import pytest

from capmfg import mfg, stackelberg as st
from capmfg.model import (
    CapacityPrice,
    ConstantDemand,
    MarginalCapacityPrice,
    MarketParams,
    PlannerParams,
)
from capmfg.noise import Grid
from capmfg.training import Schedule, TrainingConfig

SOLAR = dict(delta=0.005, c_p=5.65, c_i=37.35, c_a=1.0)
MARGINAL_PRICE = MarginalCapacityPrice(M=300.0, p0=30.0, p1=27500.0, r=1.0, D=1500.0)
CAPACITY_PRICE = CapacityPrice(p0=30.0, p1=405000.0, r=1.0, eps1=1e-4, eps2=1500.0)

CAPPED_Y0_T1 = 293.61534992679225  # (M - c_p)(1 - e^{-delta T})/delta, T = 1
CROSSING_T1 = 0.8730699733484163
CROSSING_T2 = 1.8730699733484162


def solar_market(sigma0: float, price=MARGINAL_PRICE, sigma: float = 0.0) -> MarketParams:
    return MarketParams(sigma0=sigma0, sigma=sigma, price=price, **SOLAR)


def mfg_lr_t1() -> dict:
    return dict(
        lr_init=Schedule([[0, 2.0], [600, 0.2], [850, 0.05]]),
        lr_diff=Schedule(0.003),
    )


@pytest.fixture(scope="session")
def exam02_solution():
    """Desk-scale excess-demand solve: B=2000, K=1000, N=50, sigma0=100."""
    scn = mfg.MfgScenario(market=solar_market(100.0), grid=Grid(T=1.0, N=50), mu0=1000.0)
    cfg = TrainingConfig(batch=2000, iterations=1000, seed=7, **mfg_lr_t1())
    sol = mfg.train(scn, cfg)
    batch = mfg.evaluate(scn, sol)
    return scn, sol, batch


@pytest.fixture(scope="session")
def exam04_solution():
    """T=2 variant of the excess-demand regime."""
    scn = mfg.MfgScenario(market=solar_market(100.0), grid=Grid(T=2.0, N=100), mu0=1000.0)
    cfg = TrainingConfig(
        batch=1000,
        iterations=1000,
        seed=7,
        lr_init=Schedule([[0, 4.0], [600, 0.4], [850, 0.08]]),
        lr_diff=Schedule(0.003),
    )
    sol = mfg.train(scn, cfg)
    batch = mfg.evaluate(scn, sol)
    return scn, sol, batch


def _det_limit(price):
    scn = mfg.MfgScenario(market=solar_market(1e-3, price=price), grid=Grid(T=1.0, N=400), mu0=2000.0)
    cfg = TrainingConfig(
        batch=16,
        iterations=600,
        seed=5,
        eval_batch_factor=4,
        lr_init=Schedule([[0, 2.0], [300, 0.2], [480, 0.02]]),
        lr_diff=Schedule(0.001),
    )
    sol = mfg.train(scn, cfg)
    batch = mfg.evaluate(scn, sol)
    return scn, sol, batch


@pytest.fixture(scope="session")
def det_limit_marginal():
    """sigma0 = 1e-3 solve in the varying-price region, marginal-capacity model."""
    return _det_limit(MARGINAL_PRICE)


@pytest.fixture(scope="session")
def det_limit_capacity():
    """sigma0 = 1e-3 solve in the varying-price region, capacity model."""
    return _det_limit(CAPACITY_PRICE)


def planner_config(iterations: int = 1800, batch: int = 512, seed: int = 11) -> TrainingConfig:
    return TrainingConfig(
        batch=batch,
        iterations=iterations,
        seed=seed,
        lr_init=Schedule([[0, 2.0], [900, 0.2], [1400, 0.05]]),
        lr_diff=Schedule(0.003),
        lr_value=Schedule([[0, 0.03], [900, 0.01], [1400, 0.003], [1650, 0.0005]]),
    )


def _planner_scenario(mu0: float) -> st.StackelbergScenario:
    return st.StackelbergScenario(
        market=solar_market(1.0),
        grid=Grid(T=1.0, N=50),
        mu0=mu0,
        demand=ConstantDemand(D=1500.0),
        planner=PlannerParams(lambda_d=5.0, S=500.0),
    )


@pytest.fixture(scope="session")
def ed01_run():
    """Excess-demand planner solve (subsidy regime)."""
    scn = _planner_scenario(1000.0)
    sol = st.train_stackelberg(scn, planner_config())
    batch = st.evaluate(scn, sol)
    return scn, sol, batch


@pytest.fixture(scope="session")
def es01_run():
    """Excess-supply planner solve (taxation regime)."""
    scn = _planner_scenario(2000.0)
    sol = st.train_stackelberg(scn, planner_config())
    batch = st.evaluate(scn, sol)
    return scn, sol, batch


@pytest.fixture(scope="session")
def ed01_unsubsidised():
    """Plain mean-field solve in the ED01 regime (sigma0=1), the comparison
    baseline for the terminal supply/demand gap."""
    scn = mfg.MfgScenario(market=solar_market(1.0), grid=Grid(T=1.0, N=50), mu0=1000.0)
    cfg = TrainingConfig(
        batch=512,
        iterations=600,
        seed=7,
        lr_init=Schedule([[0, 2.0], [350, 0.2], [500, 0.05]]),
        lr_diff=Schedule(0.003),
    )
    sol = mfg.train(scn, cfg)
    batch = mfg.evaluate(scn, sol)
    return scn, sol, batch
