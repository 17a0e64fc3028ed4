"""Counter-based increments, Euler stepping, producer paths."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as stn

from capmfg import mfg, nets
from capmfg.model import ConstantPrice, MarketParams
from capmfg.noise import Grid, NoisePlan, em_step, increment_at, increments, simulate_producer

from conftest import solar_market


class TestIncrements:
    def test_bitwise_repeatable(self):
        plan = NoisePlan(seed=1, stream=2, B=64, N=16)
        assert np.array_equal(increments(plan, 0.02), increments(plan, 0.02))

    def test_mean_and_variance(self):
        plan = NoisePlan(seed=3, stream=0, B=100_000, N=1)
        dt = 0.04
        dW = increments(plan, dt)
        assert abs(dW.mean()) < 4.0 * np.sqrt(dt / plan.B)
        assert abs(dW.var() - dt) < 0.05 * dt

    def test_disjoint_streams_uncorrelated(self):
        a = increments(NoisePlan(seed=3, stream=0, B=100_000, N=1), 1.0)[:, 0]
        b = increments(NoisePlan(seed=3, stream=1, B=100_000, N=1), 1.0)[:, 0]
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.01

    def test_different_seeds_differ(self):
        a = increments(NoisePlan(seed=3, stream=0, B=8, N=4), 1.0)
        b = increments(NoisePlan(seed=4, stream=0, B=8, N=4), 1.0)
        assert not np.array_equal(a, b)

    @settings(max_examples=50, deadline=None)
    @given(
        seed=stn.integers(0, 2**63 - 1),
        stream=stn.integers(0, 2**63 - 1),
        j=stn.integers(0, 7),
        i=stn.integers(0, 5),
    )
    def test_entries_addressable_in_isolation(self, seed, stream, j, i):
        plan = NoisePlan(seed=seed, stream=stream, B=8, N=6)
        block = increments(plan, 0.1)
        assert increment_at(plan, 0.1, j, i) == block[j, i]

    def test_antithetic_pairs(self):
        plan = NoisePlan(seed=5, stream=0, B=10, N=4, antithetic=True)
        dW = increments(plan, 0.3)
        assert np.array_equal(dW[0::2], -dW[1::2])
        assert increment_at(plan, 0.3, 3, 2) == dW[3, 2]

    def test_batch_growth_keeps_prefix(self):
        small = increments(NoisePlan(seed=9, stream=1, B=16, N=8), 0.5)
        big = increments(NoisePlan(seed=9, stream=1, B=64, N=8), 0.5)
        assert np.array_equal(small, big[:16])


class TestEmStep:
    def test_no_drift_no_noise(self):
        assert em_step(1000.0, 0.0, 0.1, 0.0, 0.37) == 1000.0

    def test_drift_only(self):
        assert em_step(1000.0, -5.0, 0.1, 0.0, 0.37) == pytest.approx(999.5)

    def test_noise_contribution(self):
        assert em_step(0.0, 0.0, 0.1, 100.0, 0.02) == pytest.approx(2.0)

    @given(
        x=stn.floats(-1e4, 1e4),
        drift=stn.floats(-100, 100),
        vol=stn.floats(0, 100),
        dw=stn.floats(-1, 1),
    )
    def test_linear_form(self, x, drift, vol, dw):
        assert em_step(x, drift, 0.25, vol, dw) == x + drift * 0.25 + vol * dw


class TestSimulateProducer:
    def test_pure_decay_closed_form(self):
        p = solar_market(0.0)
        grid = Grid(T=1.0, N=20)
        y_path = np.full(grid.N + 1, p.c_i)
        paths = simulate_producer(
            p, grid, y_path, 1000.0, NoisePlan(seed=1, stream=0, B=3, N=20), NoisePlan(seed=1, stream=1, B=1, N=20)
        )
        expected = 1000.0 * (1.0 - p.delta * grid.dt) ** np.arange(grid.N + 1)
        assert np.allclose(paths, expected[None, :], rtol=1e-12)

    def test_common_shock_shared_across_idiosyncratic_streams(self):
        p = solar_market(50.0, sigma=0.0)
        grid = Grid(T=1.0, N=10)
        y_path = np.linspace(200.0, 0.0, grid.N + 1)
        common = NoisePlan(seed=7, stream=123, B=1, N=10)
        a = simulate_producer(p, grid, y_path, 1000.0, NoisePlan(seed=7, stream=1, B=4, N=10), common)
        b = simulate_producer(p, grid, y_path, 1000.0, NoisePlan(seed=7, stream=2, B=4, N=10), common)
        # sigma = 0: only the shared common shock acts, so paths coincide exactly
        assert np.array_equal(a, b)

    def test_population_mean_tracks_conditional_mean_rollout(self, exam02_solution):
        scn, sol, _ = exam02_solution
        grid = scn.grid
        plan = NoisePlan(seed=31, stream=77, B=1, N=grid.N)
        batch = mfg.rollout(scn, sol.y0_net, sol.z_net, plan, sol.scaler)
        sigma = 30.0
        market = MarketParams(
            delta=scn.market.delta,
            sigma=sigma,
            sigma0=scn.market.sigma0,
            c_p=scn.market.c_p,
            c_i=scn.market.c_i,
            c_a=scn.market.c_a,
            price=scn.market.price,
        )
        n_producers = 10_000
        paths = simulate_producer(
            market,
            grid,
            batch.y[0],
            scn.mu0,
            NoisePlan(seed=31, stream=500, B=n_producers, N=grid.N),
            NoisePlan(seed=31, stream=77, B=1, N=grid.N),
        )
        gap = np.abs(paths.mean(axis=0) - batch.x[0]).max()
        assert gap < 5.0 * sigma * np.sqrt(grid.T) / np.sqrt(n_producers)

    def test_length_mismatch_rejected(self):
        p = solar_market(1.0)
        grid = Grid(T=1.0, N=10)
        with pytest.raises(ValueError, match="N\\+1"):
            simulate_producer(
                p, grid, np.zeros(5), 0.0, NoisePlan(seed=1, stream=0, B=1, N=10), NoisePlan(seed=1, stream=1, B=1, N=10)
            )


class TestGrid:
    def test_dt_and_times(self):
        g = Grid(T=2.0, N=100)
        assert g.dt == pytest.approx(0.02)
        t = g.times()
        assert len(t) == 101 and t[0] == 0.0 and t[-1] == 2.0

    def test_validation(self):
        with pytest.raises(ValueError):
            Grid(T=1.0, N=0)
        with pytest.raises(ValueError):
            Grid(T=0.0, N=10)
        with pytest.raises(ValueError):
            NoisePlan(seed=0, stream=0, B=0, N=1)
