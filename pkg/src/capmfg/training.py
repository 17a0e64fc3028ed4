"""Shared solver plumbing: configs, input scaling, trajectory containers."""

from __future__ import annotations

import math
import os
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import model as mkt
from .oracles import costate_bounds

__all__ = [
    "Schedule",
    "TrainingConfig",
    "InputScaler",
    "TrajectoryBatch",
    "capacity_drift",
    "state_bounds",
    "DivergenceError",
    "RolloutError",
    "EVAL_STREAM_BASE",
    "pinned_blas",
    "worker_cap",
]

# evaluation noise streams start here; training uses streams 0..iterations-1
EVAL_STREAM_BASE = 1 << 62


def worker_cap() -> int:
    """Value of the MFG_THREADS env var (caps internal worker pools).

    Results never depend on it: heavy math runs vectorised with BLAS pinned
    to one thread (the matrices here are small enough that multithreaded
    BLAS is slower, and pinning keeps reductions bitwise stable).
    """
    raw = os.environ.get("MFG_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return os.cpu_count() or 1


@contextmanager
def pinned_blas():
    """Scope with BLAS thread pools limited to one thread."""
    with threadpool_limits(limits=1):
        yield


class DivergenceError(RuntimeError):
    """Training loss went non-finite or exploded; carries the loss trace."""

    def __init__(self, message: str, trace: Sequence[float]):
        super().__init__(message)
        self.trace = list(trace)


class RolloutError(RuntimeError):
    """A state became non-finite during a rollout; carries the step index."""

    def __init__(self, step: int, what: str):
        super().__init__(f"non-finite {what} at step {step}")
        self.step = step


class Schedule:
    """Piecewise-constant learning-rate schedule [(start_iteration, lr), ...]."""

    def __init__(self, points):
        if isinstance(points, (int, float)):
            points = [(0, float(points))]
        pts = [(int(s), float(r)) for s, r in points]
        if not pts or pts[0][0] != 0:
            raise ValueError(f"schedule must start at iteration 0, got {points!r}")
        if any(b[0] <= a[0] for a, b in zip(pts, pts[1:])):
            raise ValueError(f"schedule starts must increase, got {points!r}")
        if any(r <= 0.0 for _, r in pts):
            raise ValueError(f"learning rates must be positive, got {points!r}")
        self.points = tuple(pts)

    def at(self, k: int) -> float:
        lr = self.points[0][1]
        for start, rate in self.points:
            if k >= start:
                lr = rate
        return lr

    def halved(self) -> "Schedule":
        return Schedule([(s, 0.5 * r) for s, r in self.points])

    def as_json(self):
        return [[s, r] for s, r in self.points]


@dataclass
class TrainingConfig:
    """Optimisation settings for both solvers.

    ``lr_init`` drives the initial-value networks (physical output units),
    ``lr_diff`` the diffusion-coefficient networks, ``lr_value`` the
    planner's value group (whose outputs are normalised by their scale).
    ``optimizer`` is ``adam`` (default) or ``sgd`` for plain descent.
    ``paper_drift`` swaps in the 1/c_a capacity-drift variant of the
    discretised pseudocode; ``undivided_z`` drops the sigma0 division in the
    planner's subsidy first-order condition.
    """

    batch: int = 2000
    iterations: int = 1000
    lr_init: Schedule = field(default_factory=lambda: Schedule(1e-4))
    lr_diff: Schedule = field(default_factory=lambda: Schedule(1e-4))
    lr_value: Schedule = field(default_factory=lambda: Schedule(1e-4))
    optimizer: str = "adam"
    seed: int = 0
    hidden: tuple[int, ...] = (32, 32)
    eval_batch_factor: int = 10
    warm_start: bool = True
    full_init_net: bool = False
    paper_drift: bool = False
    undivided_z: bool = False

    def __post_init__(self) -> None:
        if self.batch < 1 or self.iterations < 1:
            raise ValueError("batch and iterations must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if not isinstance(self.lr_init, Schedule):
            self.lr_init = Schedule(self.lr_init)
        if not isinstance(self.lr_diff, Schedule):
            self.lr_diff = Schedule(self.lr_diff)
        if not isinstance(self.lr_value, Schedule):
            self.lr_value = Schedule(self.lr_value)
        self.hidden = tuple(self.hidden)

    @property
    def betas(self) -> tuple[float, float]:
        return (0.9, 0.999) if self.optimizer == "adam" else (0.0, 0.0)


@dataclass(frozen=True)
class InputScaler:
    """Affine map of raw (t, x) onto [0,1] x [-1,1] before entering a network.

    Raw capacities are O(10^3) MWh and would saturate tanh layers.
    """

    T: float
    x_lo: float
    x_hi: float

    def scale_t(self, t):
        return np.asarray(t, dtype=np.float64) / self.T

    def scale_x(self, x):
        return 2.0 * (np.asarray(x, dtype=np.float64) - self.x_lo) / (self.x_hi - self.x_lo) - 1.0

    @property
    def dxt_dx(self) -> float:
        """d(scaled x)/d(raw x), needed when backpropagating into raw states."""
        return 2.0 / (self.x_hi - self.x_lo)

    def net_inputs(self, t: float, x: np.ndarray) -> np.ndarray:
        out = np.empty((x.shape[0], 2))
        out[:, 0] = self.scale_t(t)
        out[:, 1] = self.scale_x(x)
        return out


def capacity_drift(t, x, y, v, p: mkt.MarketParams, paper_drift: bool = False):
    """Capacity drift used by both solvers.

    Routed through one helper so that rollouts of different solvers produce
    bitwise-identical trajectories on identical inputs.  The compat variant
    replaces 1/(2 c_a) with 1/c_a as in the discretised pseudocode.
    """
    if paper_drift:
        return -p.delta * x + (y - p.c_i + v) / p.c_a
    return mkt.drift_l(t, x, y, v, p)


def state_bounds(market: mkt.MarketParams, T: float, mu0: float, subsidy_bound: float = 0.0):
    """A-priori interval the mean-capacity process can visit, with margin.

    Combines the maximal installation/decommissioning rates implied by the
    costate band, the decay of the initial state and a 5-standard-deviation
    allowance for the common noise.
    """
    y_l0, y_u0 = costate_bounds(0.0, T, market.delta, market.c_p, mkt.price_cap(market.price))
    a_hi = (float(y_u0) - market.c_i + subsidy_bound) / (2.0 * market.c_a)
    a_lo = (float(y_l0) - market.c_i - subsidy_bound) / (2.0 * market.c_a)
    pad = (abs(a_hi) + abs(a_lo) + market.delta * abs(mu0)) * T
    pad += 5.0 * market.sigma0 * math.sqrt(T) + 1.0
    return mu0 - pad, mu0 + pad


@dataclass
class TrajectoryBatch:
    """Per-sample, time-indexed arrays from one rollout.

    States are recorded on all N+1 grid points.  ``v``, ``V``, ``zv`` and
    ``D`` are planner-only and None for plain mean-field rollouts.
    """

    t: np.ndarray  # (N+1,)
    x: np.ndarray  # (B, N+1) mean capacity samples, MWh
    y: np.ndarray  # (B, N+1) costate / decoupling value, $/MWh
    alpha: np.ndarray  # (B, N+1) installation rate, MWh/year
    price: np.ndarray  # (B, N+1) spot price, $/MWh
    v: Optional[np.ndarray] = None  # (B, N+1) subsidy, $/MWh
    V: Optional[np.ndarray] = None  # (B, N+1) planner value, $
    zv: Optional[np.ndarray] = None  # (B, N+1) planner value diffusion coefficient
    D: Optional[np.ndarray] = None  # (N+1,) demand baseline, MWh

    @property
    def batch_size(self) -> int:
        return self.x.shape[0]

    def summary(self) -> dict[str, np.ndarray]:
        """Per-step means and capacity quantiles in export column order."""
        out = {
            "t": self.t,
            "muX_mean": self.x.mean(axis=0),
            "muX_p05": np.percentile(self.x, 5.0, axis=0),
            "muX_p95": np.percentile(self.x, 95.0, axis=0),
        }
        if self.v is None:
            out["muY_mean"] = self.y.mean(axis=0)
        else:
            out["phi_mean"] = self.y.mean(axis=0)
            out["V_mean"] = self.V.mean(axis=0)
            out["v_hat_mean"] = self.v.mean(axis=0)
        out["alpha_mean"] = self.alpha.mean(axis=0)
        if self.v is not None:
            out["D"] = self.D
        out["price_mean"] = self.price.mean(axis=0)
        return out
