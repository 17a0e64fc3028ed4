"""Reproducible Brownian increments and Euler-Maruyama stepping.

Increments come from a counter-based (stateless) generator: every array entry
is a pure function of ``(seed, stream, sample, step)``, so any single entry can
be regenerated in isolation and batch order / scheduling can never change the
draw.  Uniform bits are produced by a splitmix64-style finalizer chain and
turned into Gaussians through the inverse normal CDF.  Bit-exactness is only
promised within this implementation; other implementations can match
distributionally by following the same recipe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

__all__ = [
    "Grid",
    "NoisePlan",
    "increments",
    "increment_at",
    "em_step",
    "simulate_producer",
]

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


@dataclass(frozen=True)
class Grid:
    """Regular time grid on [0, T] with N steps of size dt = T/N."""

    T: float
    N: int

    def __post_init__(self) -> None:
        if self.N < 1:
            raise ValueError(f"grid needs N >= 1, got {self.N}")
        if not (self.T > 0.0 and np.isfinite(self.T)):
            raise ValueError(f"grid needs T > 0, got {self.T}")

    @property
    def dt(self) -> float:
        return self.T / self.N

    def times(self) -> np.ndarray:
        """All N+1 grid points including both endpoints."""
        return np.linspace(0.0, self.T, self.N + 1)


@dataclass(frozen=True)
class NoisePlan:
    """Addressing scheme for a B x N block of Gaussian increments.

    ``(seed, stream, sample, step)`` uniquely identifies one increment.
    Training iterations, evaluation rollouts and idiosyncratic/common shocks
    must use distinct streams to stay independent.  With ``antithetic`` on,
    odd samples are the negated even samples (variance reduction, off by
    default).
    """

    seed: int
    stream: int
    B: int
    N: int
    antithetic: bool = False

    def __post_init__(self) -> None:
        if self.B < 1:
            raise ValueError(f"plan needs B >= 1, got {self.B}")
        if self.N < 1:
            raise ValueError(f"plan needs N >= 1, got {self.N}")


def _mix(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer; input and output are uint64 arrays (0-d allowed).

    Wraparound modulo 2^64 is the intended arithmetic, hence the suppressed
    overflow warnings.
    """
    with np.errstate(over="ignore"):
        x = x + _GOLDEN
        x = x ^ (x >> np.uint64(30))
        x = x * _MIX1
        x = x ^ (x >> np.uint64(27))
        x = x * _MIX2
        x = x ^ (x >> np.uint64(31))
    return x


def _uniforms(seed: int, stream: int, samples, steps) -> np.ndarray:
    """Open-interval uniforms U(0,1) addressed by (seed, stream, sample, step)."""
    h = _mix(np.asarray(int(seed) & 0xFFFFFFFFFFFFFFFF, dtype=np.uint64))
    h = _mix(h ^ np.asarray(int(stream) & 0xFFFFFFFFFFFFFFFF, dtype=np.uint64))
    h = _mix(h ^ np.asarray(samples, dtype=np.uint64))
    h = _mix(h ^ np.asarray(steps, dtype=np.uint64))
    # 53 mantissa bits, shifted into (0, 1) so the inverse CDF stays finite
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * (2.0 ** -53)


def increments(plan: NoisePlan, dt: float) -> np.ndarray:
    """B x N array of i.i.d. N(0, dt) increments for the given plan."""
    if not dt > 0.0:
        raise ValueError(f"dt must be > 0, got {dt}")
    samples = np.arange(plan.B, dtype=np.uint64)[:, None]
    steps = np.arange(plan.N, dtype=np.uint64)[None, :]
    if plan.antithetic:
        # pair (2m, 2m+1): the odd row mirrors the even row
        base = _uniforms(plan.seed, plan.stream, samples // np.uint64(2), steps)
        z = ndtri(base)
        z[1::2] *= -1.0
    else:
        z = ndtri(_uniforms(plan.seed, plan.stream, samples, steps))
    return z * np.sqrt(dt)


def increment_at(plan: NoisePlan, dt: float, sample: int, step: int) -> float:
    """Regenerate the single increment (sample, step) in isolation.

    Equals ``increments(plan, dt)[sample, step]`` exactly.
    """
    if not (0 <= sample < plan.B and 0 <= step < plan.N):
        raise IndexError(f"(sample={sample}, step={step}) outside plan {plan.B}x{plan.N}")
    sign = 1.0
    if plan.antithetic:
        sign = -1.0 if sample % 2 else 1.0
        sample = sample // 2
    u = _uniforms(plan.seed, plan.stream, np.uint64(sample), np.uint64(step))
    return float(sign * ndtri(u) * np.sqrt(dt))


def em_step(x, drift, dt: float, vol, dW):
    """One Euler-Maruyama step: x + drift*dt + vol*dW.

    All rollouts in the package go through this helper so that distinct
    solvers produce bitwise-identical trajectories when fed identical inputs.
    """
    return x + drift * dt + vol * dW


def simulate_producer(
    params,
    grid: Grid,
    y_path: np.ndarray,
    x0: float,
    idio: NoisePlan,
    common: NoisePlan,
) -> np.ndarray:
    """Euler-Maruyama paths of individual producer capacities.

    Each of the B producers follows
    ``dX = (-delta*X + (y_t - c_i)/(2 c_a)) dt + sigma dW + sigma0 dW0``
    where ``y_path`` is the (already solved) conditional-mean costate sampled
    on the grid (length N+1, the terminal value is unused by the drift).  The
    common shock is shared by every producer: any plan with the same
    ``(seed, stream)`` reproduces it, so populations can be grown without
    changing earlier paths.  State is not clamped at zero; capacities may go
    negative transiently under noise.

    Returns an array of shape (B, N+1).
    """
    y_path = np.asarray(y_path, dtype=np.float64)
    if y_path.shape != (grid.N + 1,):
        raise ValueError(f"y_path must have length N+1={grid.N + 1}, got {y_path.shape}")
    if idio.N != grid.N or common.N != grid.N:
        raise ValueError("noise plans must cover the same number of steps as the grid")
    if common.B not in (1, idio.B):
        raise ValueError("common plan must have B=1 (shared) or match the idiosyncratic B")

    dt = grid.dt
    dW = increments(idio, dt)
    dW0 = increments(common, dt)
    if common.B == 1 and idio.B != 1:
        dW0 = np.broadcast_to(dW0, dW.shape)

    paths = np.empty((idio.B, grid.N + 1), dtype=np.float64)
    x = np.full(idio.B, float(x0))
    paths[:, 0] = x
    for i in range(grid.N):
        drift = -params.delta * x + (y_path[i] - params.c_i) / (2.0 * params.c_a)
        x = em_step(x, drift, dt, params.sigma, dW[:, i]) + params.sigma0 * dW0[:, i]
        paths[:, i + 1] = x
    return paths
