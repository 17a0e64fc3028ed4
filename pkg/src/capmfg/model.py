"""Market primitives: price curves, demand, costs and the optimal control.

Everything here is a pure function of its arguments.  Units are carried in
the docstrings and never converted internally: capacities in MWh, prices and
costs in $/MWh, rates per year, the adjustment cost in $^2/MWh^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "ConstantPrice",
    "MarginalCapacityPrice",
    "CapacityPrice",
    "PriceModel",
    "price",
    "price_slope",
    "price_cap",
    "ConstantDemand",
    "MeanRevertingDemand",
    "DemandSpec",
    "demand_at",
    "MarketParams",
    "PlannerParams",
    "optimal_alpha",
    "drift_l",
    "driver_h",
    "planner_cost_g",
    "running_profit_f",
]


# ---------------------------------------------------------------------------
# price models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantPrice:
    """Degenerate testing variant: P(t, x) = M for all inputs."""

    M: float

    def __post_init__(self) -> None:
        if not self.M > 0.0:
            raise ValueError(f"constant price needs M > 0, got {self.M}")


@dataclass(frozen=True)
class MarginalCapacityPrice:
    """Capped spot price driven by the marginal capacity x - D.

    P = M                                  if x - D <= 0 (excess demand)
    P = min(M, p0 + p1 / (x - D)^r)        if x - D > 0

    M: price cap ($/MWh); p0: floor-level constant ($/MWh); p1: scale ($);
    r >= 1: steepness; D: demand reference (MWh).
    """

    M: float
    p0: float
    p1: float
    r: float
    D: float

    def __post_init__(self) -> None:
        if not self.M > 0.0:
            raise ValueError(f"price cap M must be > 0, got {self.M}")
        if not self.p1 > 0.0:
            raise ValueError(f"price scale p1 must be > 0, got {self.p1}")
        if not self.r >= 1.0:
            raise ValueError(f"price exponent r must be >= 1, got {self.r}")


@dataclass(frozen=True)
class CapacityPrice:
    """Capped spot price driven by the capacity level itself.

    P = p0 + p1 / (x + eps1)^r            if x + eps1 >= eps2
    P = p0 + p1 / eps2^r                  if x + eps1 < eps2 (the cap)

    The two branches coincide exactly at x + eps1 = eps2.
    """

    p0: float
    p1: float
    r: float
    eps1: float
    eps2: float

    def __post_init__(self) -> None:
        if not self.p1 > 0.0:
            raise ValueError(f"price scale p1 must be > 0, got {self.p1}")
        if not self.r >= 1.0:
            raise ValueError(f"price exponent r must be >= 1, got {self.r}")
        if not (self.eps1 > 0.0 and self.eps2 > 0.0):
            raise ValueError("eps1 and eps2 must be > 0")


PriceModel = Union[ConstantPrice, MarginalCapacityPrice, CapacityPrice]


def price(model: PriceModel, t: float, x):
    """Spot price in $/MWh at time t for aggregate capacity x (MWh).

    Vectorised over x.  Non-increasing in x and bounded by the model cap.
    """
    x = np.asarray(x, dtype=np.float64)
    if isinstance(model, ConstantPrice):
        return np.broadcast_to(np.float64(model.M), x.shape).copy() if x.shape else np.float64(model.M)
    if isinstance(model, MarginalCapacityPrice):
        gap = x - model.D
        out = np.full(x.shape, model.M, dtype=np.float64)
        pos = gap > 0.0
        if np.any(pos):
            with np.errstate(divide="ignore", over="ignore"):
                val = model.p0 + model.p1 / gap[pos] ** model.r
            out[pos] = np.minimum(model.M, val)
        return out if x.shape else np.float64(out)
    if isinstance(model, CapacityPrice):
        shifted = x + model.eps1
        cap = model.p0 + model.p1 / model.eps2**model.r
        out = np.full(x.shape, cap, dtype=np.float64)
        free = shifted >= model.eps2
        if np.any(free):
            out[free] = model.p0 + model.p1 / shifted[free] ** model.r
        return out if x.shape else np.float64(out)
    raise TypeError(f"unknown price model {model!r}")


def price_slope(model: PriceModel, t: float, x):
    """dP/dx in $/MWh^2; zero wherever the cap is the active branch.

    At branch switch points the capped-side value (zero) is used, which is a
    valid subgradient of the min.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros(x.shape, dtype=np.float64)
    if isinstance(model, ConstantPrice):
        return out if x.shape else np.float64(0.0)
    if isinstance(model, MarginalCapacityPrice):
        gap = x - model.D
        pos = gap > 0.0
        if np.any(pos):
            with np.errstate(divide="ignore", over="ignore"):
                val = model.p0 + model.p1 / gap[pos] ** model.r
                slope = -model.r * model.p1 / gap[pos] ** (model.r + 1.0)
            out[pos] = np.where(val < model.M, slope, 0.0)
        return out if x.shape else np.float64(out)
    if isinstance(model, CapacityPrice):
        shifted = x + model.eps1
        free = shifted >= model.eps2
        if np.any(free):
            out[free] = -model.r * model.p1 / shifted[free] ** (model.r + 1.0)
        return out if x.shape else np.float64(out)
    raise TypeError(f"unknown price model {model!r}")


def price_cap(model: PriceModel) -> float:
    """Upper bound of the price model (used by the costate bounds)."""
    if isinstance(model, (ConstantPrice, MarginalCapacityPrice)):
        return float(model.M)
    if isinstance(model, CapacityPrice):
        return float(model.p0 + model.p1 / model.eps2**model.r)
    raise TypeError(f"unknown price model {model!r}")


# ---------------------------------------------------------------------------
# demand
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantDemand:
    """Flat demand baseline D (MWh)."""

    D: float

    def __post_init__(self) -> None:
        if not self.D > 0.0:
            raise ValueError(f"demand must be > 0, got {self.D}")


@dataclass(frozen=True)
class MeanRevertingDemand:
    """Seasonal mean-reverting demand dD = a (b(t) - D) dt.

    b(t) = b0 + b1*cos(2*pi*t - b2) - 2*pi*sin(2*pi*t - b2); a > 0 is the
    reversion speed, D0 > 0 the initial level.
    """

    a: float
    b0: float
    b1: float
    b2: float
    D0: float

    def __post_init__(self) -> None:
        if not self.a > 0.0:
            raise ValueError(f"reversion speed a must be > 0, got {self.a}")
        if not self.D0 > 0.0:
            raise ValueError(f"initial demand D0 must be > 0, got {self.D0}")

    def b(self, t: float) -> float:
        w = 2.0 * math.pi * t - self.b2
        return self.b0 + self.b1 * math.cos(w) - 2.0 * math.pi * math.sin(w)


DemandSpec = Union[ConstantDemand, MeanRevertingDemand]


def demand_at(spec: DemandSpec, t: float, dt: float, D_prev: float) -> float:
    """Advance demand one explicit Euler step from D_prev at time t.

    Constant demand ignores t, dt and D_prev.  The explicit Euler step (not
    an exact ODE solution) matches the discretisation used by the planner
    rollout.
    """
    if isinstance(spec, ConstantDemand):
        return spec.D
    if isinstance(spec, MeanRevertingDemand):
        if not dt > 0.0:
            raise ValueError(f"dt must be > 0, got {dt}")
        return D_prev + spec.a * (spec.b(t) - D_prev) * dt
    raise TypeError(f"unknown demand spec {spec!r}")


def initial_demand(spec: DemandSpec) -> float:
    if isinstance(spec, ConstantDemand):
        return spec.D
    if isinstance(spec, MeanRevertingDemand):
        return spec.D0
    raise TypeError(f"unknown demand spec {spec!r}")


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MarketParams:
    """Producer cost/decay/volatility constants plus the price model.

    delta: capacity decay rate (1/year), in (0, 1)
    sigma: idiosyncratic volatility (MWh/sqrt(year)), >= 0
    sigma0: common volatility (MWh/sqrt(year)), >= 0 (0 only for the
        deterministic-limit oracles; the planner minimiser divides by it)
    c_p: production cost ($/MWh); c_i: installation cost ($/MWh);
    c_a: adjustment cost ($^2/MWh^2)
    """

    delta: float
    sigma: float
    sigma0: float
    c_p: float
    c_i: float
    c_a: float
    price: PriceModel

    def __post_init__(self) -> None:
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0,1), got {self.delta}")
        for name in ("c_p", "c_i", "c_a"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        for name in ("sigma", "sigma0"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")


@dataclass(frozen=True)
class PlannerParams:
    """Planner constants: gap-loss weight lambda_d ($/MWh^2) and subsidy bound S ($/MWh)."""

    lambda_d: float
    S: float

    def __post_init__(self) -> None:
        if not self.lambda_d >= 0.0:
            raise ValueError(f"lambda_d must be >= 0, got {self.lambda_d}")
        if not self.S >= 0.0:
            raise ValueError(f"subsidy bound S must be >= 0, got {self.S}")


# ---------------------------------------------------------------------------
# coefficient functions
# ---------------------------------------------------------------------------


def optimal_alpha(y, v, c_a: float, c_i: float):
    """Optimal installation rate (MWh/year): (y - c_i + v) / (2 c_a).

    y is the costate ($/MWh), v the installation subsidy ($/MWh, 0 without a
    planner).  Negative values mean active decommissioning.
    """
    return (y - c_i + v) / (2.0 * c_a)


def drift_l(t: float, x, y, v, p: MarketParams):
    """Capacity drift (MWh/year): -delta*x + optimal installation rate."""
    return -p.delta * x + optimal_alpha(y, v, p.c_a, p.c_i)


def driver_h(t: float, x, y, p: MarketParams):
    """Costate drift ($/MWh/year): delta*y + c_p - P(t, x)."""
    return p.delta * y + p.c_p - price(p.price, t, x)


def planner_cost_g(t: float, x, y, v, D, pp: PlannerParams, c_a: float, c_i: float):
    """Planner running cost ($/year).

    lambda_d (D - x)^2 penalises the supply/demand gap; the second term
    (y*v - c_i*v + v^2) / (2 c_a) is the cash cost of subsidising the induced
    installations.  Strictly convex in v.
    """
    return pp.lambda_d * (D - x) ** 2 + (y * v - c_i * v + v * v) / (2.0 * c_a)


def running_profit_f(t: float, x, mean, alpha, p: MarketParams, v=0.0):
    """Producer running profit ($/year), diagnostic only.

    x*(P(t, mean) - c_p) - (c_i - v)*alpha - c_a*alpha^2, with the price
    evaluated at the population mean capacity.
    """
    return x * (price(p.price, t, mean) - p.c_p) - (p.c_i - v) * alpha - p.c_a * alpha**2
