"""Market primitives: frozen examples plus property tests."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as stn

from capmfg.model import (
    CapacityPrice,
    ConstantDemand,
    ConstantPrice,
    MarginalCapacityPrice,
    MarketParams,
    MeanRevertingDemand,
    PlannerParams,
    demand_at,
    drift_l,
    driver_h,
    optimal_alpha,
    planner_cost_g,
    price,
    price_cap,
    price_slope,
    running_profit_f,
)

MARGINAL = MarginalCapacityPrice(M=300.0, p0=30.0, p1=27500.0, r=1.0, D=1500.0)
CAPACITY = CapacityPrice(p0=30.0, p1=405000.0, r=1.0, eps1=1e-4, eps2=1500.0)
SOLAR = dict(delta=0.005, sigma=0.0, sigma0=100.0, c_p=5.65, c_i=37.35, c_a=1.0)


class TestPrice:
    def test_excess_demand_forces_cap(self):
        assert price(MARGINAL, 0.0, 1000.0) == 300.0

    def test_marginal_branch_value(self):
        # min(300, 30 + 27500/500)
        assert price(MARGINAL, 0.0, 2000.0) == pytest.approx(85.0)

    def test_capacity_lower_branch_is_cap(self):
        # 30 + 405000/1500
        assert price(CAPACITY, 0.0, 0.0) == pytest.approx(300.0)

    def test_boundary_value_belongs_to_cap_branch(self):
        assert price(MARGINAL, 0.0, 1500.0) == 300.0

    def test_branches_agree_at_switch_points(self):
        # marginal: the varying branch blows up toward the cap as x -> D+
        assert price(MARGINAL, 0.0, 1500.0 + 1e-9) == 300.0
        # capacity: both branches coincide exactly at x + eps1 = eps2
        x_switch = CAPACITY.eps2 - CAPACITY.eps1
        lower = CAPACITY.p0 + CAPACITY.p1 / CAPACITY.eps2**CAPACITY.r
        assert price(CAPACITY, 0.0, x_switch) == lower

    def test_caps(self):
        assert price_cap(MARGINAL) == 300.0
        assert price_cap(CAPACITY) == pytest.approx(300.0)
        assert price_cap(ConstantPrice(M=42.0)) == 42.0

    @given(
        x1=stn.floats(-1e5, 1e5),
        x2=stn.floats(-1e5, 1e5),
        r=stn.sampled_from([1.0, 1.5, 2.0]),
    )
    def test_non_increasing_in_x(self, x1, x2, r):
        lo, hi = min(x1, x2), max(x1, x2)
        for model in (
            MarginalCapacityPrice(M=300.0, p0=30.0, p1=27500.0, r=r, D=1500.0),
            CapacityPrice(p0=30.0, p1=405000.0, r=r, eps1=1e-4, eps2=1500.0),
            ConstantPrice(M=300.0),
        ):
            assert price(model, 0.0, lo) >= price(model, 0.0, hi)
            assert 0.0 < price(model, 0.0, lo) <= price_cap(model) + 1e-12

    def test_slope_matches_finite_difference_on_smooth_branch(self):
        for model, x in ((MARGINAL, 2000.0), (CAPACITY, 2000.0)):
            h = 1e-4
            fd = (price(model, 0.0, x + h) - price(model, 0.0, x - h)) / (2 * h)
            assert price_slope(model, 0.0, x) == pytest.approx(fd, rel=1e-6)

    def test_slope_zero_on_capped_branch(self):
        assert price_slope(MARGINAL, 0.0, 800.0) == 0.0
        assert price_slope(CAPACITY, 0.0, 100.0) == 0.0

    def test_vectorised(self):
        xs = np.array([1000.0, 1500.0, 2000.0, 3000.0])
        vals = price(MARGINAL, 0.0, xs)
        assert vals.shape == xs.shape
        assert vals[0] == 300.0 and vals[2] == pytest.approx(85.0)


class TestDemand:
    def test_constant(self):
        assert demand_at(ConstantDemand(D=1500.0), 3.7, 0.1, 999.0) == 1500.0

    def test_fixed_point_of_drift(self):
        spec = MeanRevertingDemand(a=2.0, b0=1500.0, b1=20.0, b2=0.3, D0=1400.0)
        b0 = spec.b(0.7)
        assert demand_at(spec, 0.7, 0.05, b0) == pytest.approx(b0)

    def test_one_euler_step(self):
        # b(0) = 1500 - 2*pi*sin(0) = 1500; step 1000 + 1*(1500-1000)*0.1
        spec = MeanRevertingDemand(a=1.0, b0=1500.0, b1=0.0, b2=0.0, D0=1000.0)
        assert demand_at(spec, 0.0, 0.1, 1000.0) == pytest.approx(1050.0)

    def test_seasonal_term_present_without_b1(self):
        spec = MeanRevertingDemand(a=1.0, b0=1500.0, b1=0.0, b2=0.0, D0=1000.0)
        assert spec.b(0.25) == pytest.approx(1500.0 - 2.0 * math.pi * math.sin(math.pi / 2))


class TestOptimalAlpha:
    def test_sign_change_point(self):
        assert optimal_alpha(37.35, 0.0, 1.0, 37.35) == 0.0

    def test_direct_value(self):
        assert optimal_alpha(39.35, 0.0, 1.0, 37.35) == pytest.approx(1.0)

    def test_subsidy_offsets_installation_cost(self):
        assert optimal_alpha(0.0, 37.35, 1.0, 37.35) == 0.0

    @given(
        y=stn.floats(-500, 500),
        v=stn.floats(-500, 500),
        dy=stn.floats(1e-3, 100),
    )
    def test_strictly_increasing_in_y_and_v(self, y, v, dy):
        assert optimal_alpha(y + dy, v, 1.0, 37.35) > optimal_alpha(y, v, 1.0, 37.35)
        assert optimal_alpha(y, v + dy, 1.0, 37.35) > optimal_alpha(y, v, 1.0, 37.35)

    @given(y=stn.floats(-500, 500), dc=stn.floats(1e-3, 100))
    def test_strictly_decreasing_in_ci(self, y, dc):
        assert optimal_alpha(y, 0.0, 1.0, 37.35 + dc) < optimal_alpha(y, 0.0, 1.0, 37.35)

    @given(y=stn.floats(38.0, 500.0), ca=stn.floats(0.1, 10.0), dca=stn.floats(1e-3, 5.0))
    def test_decreasing_in_ca_when_rate_positive(self, y, ca, dca):
        assert optimal_alpha(y, 0.0, ca + dca, 37.35) < optimal_alpha(y, 0.0, ca, 37.35)


class TestCoefficients:
    def setup_method(self):
        self.p = MarketParams(price=MARGINAL, **SOLAR)

    def test_drift_zero_at_rest(self):
        assert drift_l(0.0, 0.0, self.p.c_i, 0.0, self.p) == 0.0

    def test_drift_decay_only(self):
        assert drift_l(0.0, 1000.0, self.p.c_i, 0.0, self.p) == pytest.approx(-5.0)

    def test_drift_unit_install(self):
        assert drift_l(0.0, 0.0, self.p.c_i + 2 * self.p.c_a, 0.0, self.p) == pytest.approx(1.0)

    def test_driver_at_cap(self):
        assert driver_h(0.0, 1000.0, 0.0, self.p) == pytest.approx(-294.35)

    def test_driver_zero_when_price_covers_costs(self):
        p = MarketParams(price=ConstantPrice(M=SOLAR["c_p"]), **SOLAR)
        assert driver_h(0.0, 1000.0, 0.0, p) == pytest.approx(0.0)

    def test_driver_direct_value(self):
        p = MarketParams(price=ConstantPrice(M=30.0), **SOLAR)
        assert driver_h(0.0, 0.0, 100.0, p) == pytest.approx(-23.85)


class TestPlannerCost:
    def setup_method(self):
        self.pp = PlannerParams(lambda_d=5.0, S=500.0)

    def test_zero_at_matched_supply(self):
        assert planner_cost_g(0.0, 1500.0, 10.0, 0.0, 1500.0, self.pp, 1.0, 37.35) == 0.0

    def test_gap_term(self):
        val = planner_cost_g(0.0, 1000.0, 10.0, 0.0, 1500.0, self.pp, 1.0, 37.35)
        assert val == pytest.approx(1_250_000.0)

    def test_subsidy_terms_cancel(self):
        assert planner_cost_g(0.0, 1500.0, 0.0, 37.35, 1500.0, self.pp, 1.0, 37.35) == pytest.approx(0.0)

    @given(
        y=stn.floats(-300, 300),
        v=stn.floats(-500, 500),
        x=stn.floats(0, 3000),
    )
    def test_nonnegative_when_subsidy_profitable(self, y, v, x):
        if v * (y - 37.35 + v) >= 0.0:
            assert planner_cost_g(0.0, x, y, v, 1500.0, self.pp, 1.0, 37.35) >= 0.0

    @given(y=stn.floats(-300, 300), v=stn.floats(-400, 400), ca=stn.floats(0.2, 5.0))
    def test_strictly_convex_in_v(self, y, v, ca):
        h = 1.0
        g = lambda vv: planner_cost_g(0.0, 1000.0, y, vv, 1500.0, self.pp, ca, 37.35)
        second = g(v + h) - 2 * g(v) + g(v - h)
        assert second == pytest.approx(1.0 / ca, rel=1e-6)


class TestRunningProfit:
    def setup_method(self):
        self.p = MarketParams(price=MARGINAL, **SOLAR)

    def test_zero_at_rest(self):
        assert running_profit_f(0.0, 0.0, 1000.0, 0.0, self.p) == 0.0

    def test_margin_at_cap(self):
        assert running_profit_f(0.0, 1.0, 1000.0, 0.0, self.p) == pytest.approx(294.35)

    def test_quadratic_vertex_maximises_over_alpha(self):
        vertex = -(self.p.c_i - 0.0) / (2 * self.p.c_a)
        f = lambda a: running_profit_f(0.0, 100.0, 1000.0, a, self.p)
        assert f(vertex) > f(vertex + 0.5)
        assert f(vertex) > f(vertex - 0.5)


class TestValidation:
    def test_delta_range(self):
        with pytest.raises(ValueError, match="delta"):
            MarketParams(delta=1.5, sigma=0.0, sigma0=1.0, c_p=1.0, c_i=1.0, c_a=1.0, price=MARGINAL)

    def test_degenerate_sigma0_allowed_for_oracles(self):
        MarketParams(delta=0.1, sigma=0.0, sigma0=0.0, c_p=1.0, c_i=1.0, c_a=1.0, price=MARGINAL)

    def test_price_invariants(self):
        with pytest.raises(ValueError):
            MarginalCapacityPrice(M=300.0, p0=30.0, p1=27500.0, r=0.5, D=1500.0)
        with pytest.raises(ValueError):
            CapacityPrice(p0=30.0, p1=-1.0, r=1.0, eps1=1e-4, eps2=1500.0)

    def test_planner_invariants(self):
        with pytest.raises(ValueError):
            PlannerParams(lambda_d=-1.0, S=500.0)
        with pytest.raises(ValueError):
            PlannerParams(lambda_d=1.0, S=-1.0)
