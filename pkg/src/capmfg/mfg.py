"""Deep FBSDE solver for the conditional-mean capacity equilibrium.

The coupled forward/backward system for the mean capacity and its costate is
rewritten as a forward system with a trainable initial costate and a
feedback network for the costate's diffusion coefficient, trained to meet
the zero terminal condition in mean square.  Gradients flow through every
Euler step: the backward pass below is the exact reverse-mode adjoint of the
discrete rollout (no truncation), including the state-dependence of the
price and of the diffusion network.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import model as mkt
from . import nets
from .noise import Grid, NoisePlan, em_step, increments
from .oracles import costate_bounds
from .training import (
    EVAL_STREAM_BASE,
    DivergenceError,
    InputScaler,
    RolloutError,
    TrainingConfig,
    TrajectoryBatch,
    capacity_drift,
    pinned_blas,
    state_bounds,
)

log = logging.getLogger(__name__)

__all__ = ["MfgScenario", "MfgSolution", "rollout", "loss", "train", "evaluate"]

# seed offsets for the per-network initialisers
_SEED_Y0, _SEED_Z = 101, 102


@dataclass(frozen=True)
class MfgScenario:
    """Market, time grid and the deterministic initial mean capacity (MWh)."""

    market: mkt.MarketParams
    grid: Grid
    mu0: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.mu0):
            raise ValueError(f"mu0 must be finite, got {self.mu0}")

    def scaler(self, subsidy_bound: float = 0.0) -> InputScaler:
        lo, hi = state_bounds(self.market, self.grid.T, self.mu0, subsidy_bound)
        return InputScaler(T=self.grid.T, x_lo=lo, x_hi=hi)


@dataclass
class MfgSolution:
    """Trained networks plus the full loss trace."""

    y0: float
    y0_net: nets.NetParams
    z_net: nets.NetParams
    loss_trace: np.ndarray
    scaler: InputScaler
    config: TrainingConfig
    restarts: int = 0


def _drift_factor(c_a: float, paper_drift: bool) -> float:
    """1/(2 c_a) from the optimal control; 1/c_a reproduces the discretised
    pseudocode variant (compat flag)."""
    return 1.0 / c_a if paper_drift else 1.0 / (2.0 * c_a)


def _roll(
    scn: MfgScenario,
    y0_net,
    z_net,
    plan: NoisePlan,
    scaler: InputScaler,
    paper_drift: bool,
    keep_caches: bool = False,
):
    """Forward Euler rollout; returns the state paths needed for the adjoint.

    With ``keep_caches`` the per-step network activations are retained so
    the backward pass can skip recomputing them.
    """
    p = scn.market
    grid = scn.grid
    dt = grid.dt
    dW = increments(plan, dt)

    x = np.full(plan.B, float(scn.mu0))
    x0_scaled = np.array([[float(scaler.scale_x(scn.mu0))]])
    y = np.full(plan.B, nets.forward(y0_net, x0_scaled[0]))

    xs = np.empty((plan.B, grid.N + 1))
    ys = np.empty((plan.B, grid.N + 1))
    xs[:, 0], ys[:, 0] = x, y
    caches = [] if keep_caches else None
    for i in range(grid.N):
        t = i * dt
        z, acts = nets._forward_cached(z_net, scaler.net_inputs(t, x))
        if keep_caches:
            caches.append(acts)
        drift_x = capacity_drift(t, x, y, 0.0, p, paper_drift)
        drift_y = mkt.driver_h(t, x, y, p)
        x = em_step(x, drift_x, dt, p.sigma0, dW[:, i])
        y = em_step(y, drift_y, dt, z, dW[:, i])
        if not (np.isfinite(x).all() and np.isfinite(y).all()):
            raise RolloutError(i, "mean-capacity state")
        xs[:, i + 1], ys[:, i + 1] = x, y
    return xs, ys, dW, caches


def rollout(
    scn: MfgScenario,
    y0_net: nets.NetParams,
    z_net: nets.NetParams,
    plan: NoisePlan,
    scaler: Optional[InputScaler] = None,
    paper_drift: bool = False,
) -> TrajectoryBatch:
    """Simulate the coupled mean-capacity/costate system under given networks."""
    scaler = scaler or scn.scaler()
    with pinned_blas():
        xs, ys, _, _ = _roll(scn, y0_net, z_net, plan, scaler, paper_drift)
    t = scn.grid.times()
    prices = np.empty_like(xs)
    for i, ti in enumerate(t):
        prices[:, i] = mkt.price(scn.market.price, ti, xs[:, i])
    alphas = mkt.optimal_alpha(ys, 0.0, scn.market.c_a, scn.market.c_i)
    return TrajectoryBatch(t=t, x=xs, y=ys, alpha=alphas, price=prices)


def loss(batch: TrajectoryBatch) -> float:
    """Mean squared terminal costate over the batch."""
    return float(np.mean(batch.y[:, -1] ** 2))


def _grads(scn, y0_net, z_net, scaler, paper_drift, xs, ys, dW, caches):
    """Exact adjoint of the rollout: gradients of mean(y_T^2) w.r.t. both nets.

    Runs the recursion for (dL/dx_i, dL/dy_i) backward through the Euler
    steps, accumulating per-step vector-Jacobian products into the diffusion
    network and finally into the initial-value network.
    """
    p = scn.market
    grid = scn.grid
    dt = grid.dt
    kappa = _drift_factor(p.c_a, paper_drift)
    B = xs.shape[0]

    a = np.zeros(B)  # dL/dx_i
    b = 2.0 * ys[:, -1] / B  # dL/dy_i
    z_grads = None
    for i in range(grid.N - 1, -1, -1):
        t = i * dt
        x_i = xs[:, i]
        u = b * dW[:, i]
        step_grads, in_grads = nets.backward_cached(z_net, caches[i], u)
        if z_grads is None:
            z_grads = step_grads
        else:
            for (gw, gb), (sw, sb) in zip(z_grads, step_grads):
                gw += sw
                gb += sb
        px = mkt.price_slope(p.price, t, x_i)
        a, b = (
            a * (1.0 - p.delta * dt) - b * px * dt + in_grads[:, 1] * scaler.dxt_dx,
            a * kappa * dt + b * (1.0 + p.delta * dt),
        )
    x0_scaled = np.full((B, 1), float(scaler.scale_x(scn.mu0)))
    y0_grads, _ = nets.backward(y0_net, x0_scaled, b)
    return y0_grads, z_grads


def _build_nets(scn: MfgScenario, cfg: TrainingConfig, scaler: InputScaler):
    """Fresh networks: a (near-)scalar initial costate and the diffusion net.

    The initial-value network is affine in the scaled initial state unless
    ``full_init_net`` asks for hidden layers (multi-initial-condition
    sweeps).  Its bias is warm-started at the midpoint of the a-priori
    costate band.  The diffusion net's head starts at exactly zero so that
    degenerate-noise scenarios begin unbiased.
    """
    p = scn.market
    y0_arch = nets.Arch(input_dim=1, hidden_widths=cfg.hidden if cfg.full_init_net else ())
    y0_net = nets.init(y0_arch, cfg.seed + _SEED_Y0)
    if cfg.warm_start:
        y_l0, y_u0 = costate_bounds(0.0, scn.grid.T, p.delta, p.c_p, mkt.price_cap(p.price))
        y0_net.biases[-1][:] = 0.5 * (float(y_l0) + float(y_u0))
    z_scale = p.sigma0 if p.sigma0 > 0.0 else 1.0
    z_net = nets.init(
        nets.Arch(input_dim=2, hidden_widths=cfg.hidden, output_scale=z_scale),
        cfg.seed + _SEED_Z,
    )
    z_net.weights[-1][:] = 0.0
    return y0_net, z_net


def train(scn: MfgScenario, cfg: TrainingConfig) -> MfgSolution:
    """Run the full training loop; deterministic given (scenario, config).

    Each iteration draws a fresh noise stream, rolls the system forward,
    differentiates the terminal loss through the whole rollout and applies
    one optimiser step per network group.  If the loss exceeds 1e6 x its
    initial value (or goes non-finite) the loop restarts once from scratch
    with halved learning rates; a second divergence aborts.
    """
    scaler = scn.scaler()
    lr_init, lr_diff = cfg.lr_init, cfg.lr_diff
    beta1, beta2 = cfg.betas

    for attempt in range(2):
        y0_net, z_net = _build_nets(scn, cfg, scaler)
        trace: list[float] = []
        diverged = False
        with pinned_blas():
            for k in range(cfg.iterations):
                plan = NoisePlan(seed=cfg.seed, stream=k, B=cfg.batch, N=scn.grid.N)
                try:
                    xs, ys, dW, caches = _roll(
                        scn, y0_net, z_net, plan, scaler, cfg.paper_drift, keep_caches=True
                    )
                except RolloutError as err:
                    trace.append(float("nan"))
                    diverged = True
                    log.warning("rollout diverged at iteration %d (%s)", k, err)
                    break
                J = float(np.mean(ys[:, -1] ** 2))
                trace.append(J)
                if not np.isfinite(J) or (k > 0 and J > 1e6 * max(trace[0], 1e-12)):
                    diverged = True
                    log.warning("loss diverged at iteration %d (J=%g)", k, J)
                    break
                y0_grads, z_grads = _grads(
                    scn, y0_net, z_net, scaler, cfg.paper_drift, xs, ys, dW, caches
                )
                nets.step(y0_net, y0_grads, lr_init.at(k), beta1, beta2)
                nets.step(z_net, z_grads, lr_diff.at(k), beta1, beta2)
        if not diverged:
            y0 = nets.forward(y0_net, np.array([float(scaler.scale_x(scn.mu0))]))
            return MfgSolution(
                y0=float(y0),
                y0_net=y0_net,
                z_net=z_net,
                loss_trace=np.array(trace),
                scaler=scaler,
                config=cfg,
                restarts=attempt,
            )
        if attempt == 0:
            log.warning("halving learning rates and restarting from scratch")
            lr_init, lr_diff = lr_init.halved(), lr_diff.halved()
    raise DivergenceError("training diverged twice (after halving learning rates)", trace)


def evaluate(scn: MfgScenario, sol: MfgSolution, plan: Optional[NoisePlan] = None) -> TrajectoryBatch:
    """Re-roll the trained system on held-out evaluation streams."""
    if plan is None:
        plan = NoisePlan(
            seed=sol.config.seed,
            stream=EVAL_STREAM_BASE,
            B=sol.config.eval_batch_factor * sol.config.batch,
            N=scn.grid.N,
        )
    return rollout(scn, sol.y0_net, sol.z_net, plan, sol.scaler, sol.config.paper_drift)
