"""Independent ground-truth solvers used to check the trained equilibria.

These deliberately use different numerics than the solvers (closed forms,
classical Runge-Kutta shooting on a finer grid, an explicit upwind
finite-difference scheme), so agreement between solver and oracle is
evidence rather than tautology.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import model as mkt

__all__ = [
    "capped_y",
    "alpha_crossing",
    "costate_bounds",
    "costate_bounds_euler",
    "shoot_deterministic",
    "PhiTable",
    "solve_phi_fd",
    "resolve_costate_along_path",
    "NoCrossingError",
    "ShootingError",
    "StabilityError",
]


class NoCrossingError(ValueError):
    """The installation rate never changes sign on [0, T]."""


class ShootingError(RuntimeError):
    """No sign change of the terminal costate over the scanned bracket."""


class StabilityError(ValueError):
    """Requested finite-difference mesh violates the explicit-scheme bound."""


def capped_y(t: float, T: float, delta: float, M: float, c_p: float) -> float:
    """Costate under a price pinned at the cap M: (M - c_p)(1 - e^{-delta (T-t)})/delta.

    Uses expm1 so the delta -> 0 limit (M - c_p)(T - t) is reached without
    cancellation.
    """
    if t > T:
        raise ValueError(f"need t <= T, got t={t} > T={T}")
    return (M - c_p) * (-math.expm1(-delta * (T - t))) / delta


def alpha_crossing(T: float, delta: float, M: float, c_p: float, c_i: float) -> float:
    """Time at which the capped-price installation rate changes sign.

    Solves capped_y(t*) = c_i in closed form:
    t* = T + ln(1 - delta*c_i/(M - c_p)) / delta.
    Requires 0 < c_i < capped_y(0), else the rate never crosses zero.
    """
    y0 = capped_y(0.0, T, delta, M, c_p)
    if not 0.0 < c_i < y0:
        raise NoCrossingError(
            f"no crossing on [0, {T}]: need 0 < c_i < {y0:.6g}, got c_i={c_i}"
        )
    return T + math.log1p(-delta * c_i / (M - c_p)) / delta


def costate_bounds(t, T: float, delta: float, c_p: float, p_cap: float):
    """A-priori costate band (y_l(t), y_u(t)) from the price bounds (0, p_cap].

    y_l(t) = -c_p (1 - e^{-delta (T-t)}) / delta,
    y_u(t) = (p_cap - c_p)(1 - e^{-delta (T-t)}) / delta.
    Vectorised over t.
    """
    decay = -np.expm1(-delta * (np.asarray(T, dtype=np.float64) - t)) / delta
    return -c_p * decay, (p_cap - c_p) * decay


def costate_bounds_euler(steps_to_go, dt: float, delta: float, c_p: float, p_cap: float):
    """Costate band compounded on an explicit Euler grid.

    Replaces e^{-delta m dt} by (1 - delta dt)^m, so an explicit backward
    marching scheme with prices in (0, p_cap] satisfies these bounds exactly
    (discrete comparison principle); the continuous band is undershot by
    O(delta dt).
    """
    m = np.asarray(steps_to_go, dtype=np.float64)
    decay = (1.0 - (1.0 - delta * dt) ** m) / delta
    return -c_p * decay, (p_cap - c_p) * decay


# ---------------------------------------------------------------------------
# deterministic-limit shooting
# ---------------------------------------------------------------------------


def _rk4_terminal(scn, y0: float, n_steps: int, keep_path: bool = False):
    """Integrate the coupled capacity/costate ODEs forward with classical RK4."""
    p = scn.market
    T = scn.grid.T
    h = T / n_steps

    def rhs(t, x, y):
        return (
            -p.delta * x + (y - p.c_i) / (2.0 * p.c_a),
            p.delta * y + p.c_p - float(mkt.price(p.price, t, x)),
        )

    x, y = float(scn.mu0), float(y0)
    xs = [x] if keep_path else None
    ys = [y] if keep_path else None
    for i in range(n_steps):
        t = i * h
        k1 = rhs(t, x, y)
        k2 = rhs(t + 0.5 * h, x + 0.5 * h * k1[0], y + 0.5 * h * k1[1])
        k3 = rhs(t + 0.5 * h, x + 0.5 * h * k2[0], y + 0.5 * h * k2[1])
        k4 = rhs(t + h, x + h * k3[0], y + h * k3[1])
        x += h * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]) / 6.0
        y += h * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]) / 6.0
        if keep_path:
            xs.append(x)
            ys.append(y)
    if keep_path:
        return np.array(xs), np.array(ys)
    return y


@dataclass(frozen=True)
class ShootingSolution:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    y0: float


def shoot_deterministic(scn, n_mult: int = 10, rel_tol: float = 1e-8) -> ShootingSolution:
    """Solve the vanishing-noise two-point boundary problem by bisection.

    The scenario must have sigma0 = 0.  Integrates with RK4 on n_mult * N
    steps and bisects on y(0) until |y(T)| < rel_tol * y_u(0).  The terminal
    map y0 -> y(T) is strictly increasing (decreasing price), so bisection is
    safe once a bracket is found.
    """
    if scn.market.sigma0 != 0.0:
        raise ValueError(f"shooting requires sigma0 = 0, got {scn.market.sigma0}")
    p = scn.market
    n_steps = n_mult * scn.grid.N
    y_l0, y_u0 = costate_bounds(0.0, scn.grid.T, p.delta, p.c_p, mkt.price_cap(p.price))
    tol = rel_tol * float(y_u0)

    lo, hi = float(y_l0) - 1.0, float(y_u0) + 1.0
    f_lo = _rk4_terminal(scn, lo, n_steps)
    f_hi = _rk4_terminal(scn, hi, n_steps)
    if not (f_lo < 0.0 < f_hi):
        raise ShootingError(
            "no bracket for the terminal costate: "
            f"y(T; {lo:.6g}) = {f_lo:.6g}, y(T; {hi:.6g}) = {f_hi:.6g}"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = _rk4_terminal(scn, mid, n_steps)
        if abs(f_mid) < tol:
            lo = hi = mid
            break
        if f_mid < 0.0:
            lo = mid
        else:
            hi = mid
    y0 = 0.5 * (lo + hi)
    xs, ys = _rk4_terminal(scn, y0, n_steps, keep_path=True)
    return ShootingSolution(t=np.linspace(0.0, scn.grid.T, n_steps + 1), x=xs, y=ys, y0=y0)


# ---------------------------------------------------------------------------
# finite-difference solve of the decoupling-field PDE
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PhiTable:
    """Decoupling field on a (time, state) mesh with bilinear interpolation."""

    t: np.ndarray  # (Kt+1,)
    x: np.ndarray  # (M,)
    phi: np.ndarray  # (Kt+1, M)

    def __call__(self, t, x):
        """Bilinear interpolation; clamps to the mesh at the boundary."""
        t = np.asarray(t, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        it = np.clip(np.searchsorted(self.t, t, side="right") - 1, 0, len(self.t) - 2)
        ix = np.clip(np.searchsorted(self.x, x, side="right") - 1, 0, len(self.x) - 2)
        wt = np.clip((t - self.t[it]) / (self.t[it + 1] - self.t[it]), 0.0, 1.0)
        wx = np.clip((x - self.x[ix]) / (self.x[ix + 1] - self.x[ix]), 0.0, 1.0)
        v00 = self.phi[it, ix]
        v01 = self.phi[it, ix + 1]
        v10 = self.phi[it + 1, ix]
        v11 = self.phi[it + 1, ix + 1]
        return (1.0 - wt) * ((1.0 - wx) * v00 + wx * v01) + wt * ((1.0 - wx) * v10 + wx * v11)

    def to_csv(self, path) -> None:
        """Dump the mesh as (t, x, phi) rows."""
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write("t,x,phi\n")
            for i, ti in enumerate(self.t):
                for j, xj in enumerate(self.x):
                    fh.write(f"{ti!r},{xj!r},{self.phi[i, j]!r}\n")


def solve_phi_fd(
    market: mkt.MarketParams,
    T: float,
    x_lo: float,
    x_hi: float,
    nx: int = 201,
    nt: Optional[int] = None,
    v: Optional[Callable] = None,
    v_bound: float = 0.0,
) -> PhiTable:
    """Explicit backward finite-difference solve of the decoupling-field PDE.

    phi_t + phi_x * l(t, x, phi, v) + sigma0^2/2 phi_xx - delta*phi - c_p
    + P(t, x) = 0 with phi(T, .) = 0, marched backward in time with an
    upwinded advection term, a centred second difference and Neumann
    (zero-slope) boundaries.

    ``v`` is an optional feedback ``v(t, x, phi)`` evaluated on mesh values
    (zero when omitted); ``v_bound`` is its sup bound, entering the stability
    estimate.  ``nt`` defaults to the smallest step count satisfying the
    explicit stability bound; passing a too-small ``nt`` raises
    ``StabilityError`` with the required refinement.
    """
    if x_hi <= x_lo:
        raise ValueError(f"empty state interval [{x_lo}, {x_hi}]")
    x = np.linspace(x_lo, x_hi, nx)
    dx = x[1] - x[0]

    _, y_u0 = costate_bounds(0.0, T, market.delta, market.c_p, mkt.price_cap(market.price))
    l_max = (
        market.delta * max(abs(x_lo), abs(x_hi))
        + (float(y_u0) + market.c_i + abs(v_bound)) / (2.0 * market.c_a)
    )
    # explicit-scheme bound: dt * (sigma0^2/dx^2 + |l|/dx + delta) <= 1
    rate = market.sigma0**2 / dx**2 + l_max / dx + market.delta
    nt_min = max(1, int(math.ceil(T * rate / 0.9)))
    if nt is None:
        nt = nt_min
    elif nt < nt_min:
        raise StabilityError(
            f"nt={nt} violates the explicit stability bound; need nt >= {nt_min} "
            f"for nx={nx} on [{x_lo}, {x_hi}]"
        )
    dt = T / nt

    phi = np.zeros(nx)
    out = np.empty((nt + 1, nx))
    out[nt] = phi
    half_sig2 = 0.5 * market.sigma0**2
    for k in range(nt, 0, -1):
        t_here = k * dt
        p_vals = mkt.price(market.price, t_here, x)
        v_vals = v(t_here, x, phi) if v is not None else 0.0
        drift = mkt.drift_l(t_here, x, phi, v_vals, market)
        padded = np.concatenate(([phi[0]], phi, [phi[-1]]))  # zero-slope ghosts
        fwd = (padded[2:] - padded[1:-1]) / dx
        bwd = (padded[1:-1] - padded[:-2]) / dx
        # marching backward in time the characteristics run against l, so
        # positive drift takes the forward difference (monotone under CFL)
        adv = np.where(drift > 0.0, fwd, bwd) * drift
        diff = half_sig2 * (padded[2:] - 2.0 * padded[1:-1] + padded[:-2]) / dx**2
        # phi_t = delta*phi + c_p - P - adv - diff; step backward in time
        phi = phi - dt * (market.delta * phi + market.c_p - p_vals - adv - diff)
        out[k - 1] = phi
    return PhiTable(t=np.linspace(0.0, T, nt + 1), x=x, phi=out)


def resolve_costate_along_path(t_grid: np.ndarray, price_path: np.ndarray, delta: float, c_p: float) -> np.ndarray:
    """Re-solve the linear costate recursion given a frozen price path.

    Inverts the forward Euler step y_{i+1} = y_i (1 + delta dt) +
    (c_p - P_i) dt from the terminal condition y_N = 0; feeding back a solved
    equilibrium's price path must reproduce its costate path (fixed-point
    consistency).
    """
    t_grid = np.asarray(t_grid, dtype=np.float64)
    price_path = np.asarray(price_path, dtype=np.float64)
    n = len(t_grid) - 1
    y = np.zeros(n + 1)
    for i in range(n - 1, -1, -1):
        dt = t_grid[i + 1] - t_grid[i]
        y[i] = (y[i + 1] - (c_p - price_path[i]) * dt) / (1.0 + delta * dt)
    return y
