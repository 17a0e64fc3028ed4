"""Planner extension: joint solve of the value function and decoupling field.

The planner's value process V and the producers' decoupling value phi are
carried forward as scalar processes initialised by their networks at t=0,
with two more networks for their diffusion coefficients.  The subsidy is the
clamped first-order-condition feedback evaluated pointwise each step; it is
treated as a constant in differentiation (gradients are stopped at the
clamp).  Two losses - mean squared terminal V and terminal phi - update the
(value, value-diffusion) and (field, field-diffusion) groups simultaneously.
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

__all__ = [
    "StackelbergScenario",
    "PlannerNets",
    "StackelbergSolution",
    "minimizer_v",
    "rollout_planner",
    "losses",
    "train_stackelberg",
    "evaluate",
    "foc_residuals",
]

_SEED_V0, _SEED_PHI0, _SEED_ZV, _SEED_ZPHI = 201, 202, 203, 204


@dataclass(frozen=True)
class StackelbergScenario:
    """Market, grid, initial mean capacity, demand process, planner constants."""

    market: mkt.MarketParams
    grid: Grid
    mu0: float
    demand: mkt.DemandSpec
    planner: mkt.PlannerParams

    def __post_init__(self) -> None:
        if not np.isfinite(self.mu0):
            raise ValueError(f"mu0 must be finite, got {self.mu0}")

    def scaler(self) -> InputScaler:
        lo, hi = state_bounds(self.market, self.grid.T, self.mu0, self.planner.S)
        return InputScaler(T=self.grid.T, x_lo=lo, x_hi=hi)


@dataclass
class PlannerNets:
    """The four networks: initial value, initial field, and their diffusions."""

    v0_net: nets.NetParams  # V(0, .)
    phi0_net: nets.NetParams  # phi(0, .)
    zv_net: nets.NetParams  # diffusion coefficient of V
    zphi_net: nets.NetParams  # diffusion coefficient of phi


@dataclass
class StackelbergSolution:
    nets: PlannerNets
    loss_V_trace: np.ndarray
    loss_phi_trace: np.ndarray
    scaler: InputScaler
    config: TrainingConfig
    restarts: int = 0

    def _at_start(self, net: nets.NetParams, mu0: float) -> float:
        return float(nets.forward(net, np.array([float(self.scaler.scale_x(mu0))])))

    def V0(self, mu0: float) -> float:
        return self._at_start(self.nets.v0_net, mu0)

    def phi0(self, mu0: float) -> float:
        return self._at_start(self.nets.phi0_net, mu0)


def minimizer_v(phi_val, zv_val, sigma0: float, c_i: float, S: float, undivided: bool = False):
    """Clamped first-order-condition subsidy.

    clamp((c_i - zv/sigma0 - phi)/2, -S, S): the interior value is the unique
    minimiser of the strictly convex map
    v -> g-terms(v) + l(t, x, phi, v) * dV/dx, using zv ~ sigma0 * dV/dx.
    ``undivided`` reproduces the raw pseudocode formula without the sigma0
    division (the two agree when sigma0 = 1).
    """
    if not undivided:
        if sigma0 == 0.0:
            raise ValueError("minimizer_v needs sigma0 != 0 to recover dV/dx from zv")
        zv_val = zv_val / sigma0
    return np.clip((c_i - zv_val - phi_val) / 2.0, -S, S)


def _initial_scales(scn: StackelbergScenario):
    """Order-of-magnitude output scales for the value-side networks."""
    pp = scn.planner
    d0 = mkt.initial_demand(scn.demand)
    gap = max(abs(d0 - scn.mu0), 0.1 * abs(d0), 1.0)
    v_scale = max(
        1.0,
        pp.lambda_d * gap * gap * scn.grid.T,
        pp.S * pp.S * scn.grid.T / (2.0 * scn.market.c_a),
    )
    zv_scale = max(1.0, scn.market.sigma0 * 2.0 * pp.lambda_d * gap * scn.grid.T)
    return v_scale, zv_scale


def _build_nets(scn: StackelbergScenario, cfg: TrainingConfig, scaler: InputScaler) -> PlannerNets:
    """Initial-value nets are affine (trainable scalars); diffusion nets start
    with a zero head.  The field net's bias warm-starts at the midpoint of
    the a-priori costate band, exactly as the plain solver does."""
    p = scn.market
    v_scale, zv_scale = _initial_scales(scn)
    init_hidden = cfg.hidden if cfg.full_init_net else ()

    v0_net = nets.init(nets.Arch(input_dim=1, hidden_widths=init_hidden, output_scale=v_scale), cfg.seed + _SEED_V0)
    phi0_net = nets.init(nets.Arch(input_dim=1, hidden_widths=init_hidden), cfg.seed + _SEED_PHI0)
    if cfg.warm_start:
        y_l0, y_u0 = costate_bounds(0.0, scn.grid.T, p.delta, p.c_p, mkt.price_cap(p.price))
        phi0_net.biases[-1][:] = 0.5 * (float(y_l0) + float(y_u0))

    zv_net = nets.init(nets.Arch(input_dim=2, hidden_widths=cfg.hidden, output_scale=zv_scale), cfg.seed + _SEED_ZV)
    zv_net.weights[-1][:] = 0.0
    zphi_scale = p.sigma0 if p.sigma0 > 0.0 else 1.0
    zphi_net = nets.init(nets.Arch(input_dim=2, hidden_widths=cfg.hidden, output_scale=zphi_scale), cfg.seed + _SEED_ZPHI)
    zphi_net.weights[-1][:] = 0.0
    return PlannerNets(v0_net=v0_net, phi0_net=phi0_net, zv_net=zv_net, zphi_net=zphi_net)


def _roll(
    scn: StackelbergScenario,
    pn: PlannerNets,
    plan: NoisePlan,
    scaler: InputScaler,
    cfg_flags: tuple[bool, bool],
    keep_caches: bool = False,
    v_override: Optional[np.ndarray] = None,
):
    """Forward rollout of (x, phi, V, D) with the clamped subsidy feedback.

    ``v_override`` (B x N) replaces the feedback with a frozen subsidy path;
    the training gradients are exact for the frozen-subsidy rollout (the
    feedback is gradient-stopped), which is what the gradient tests check.
    """
    paper_drift, undivided = cfg_flags
    p = scn.market
    pp = scn.planner
    grid = scn.grid
    dt = grid.dt
    dW = increments(plan, dt)

    x0s = np.array([float(scaler.scale_x(scn.mu0))])
    x = np.full(plan.B, float(scn.mu0))
    phi = np.full(plan.B, nets.forward(pn.phi0_net, x0s))
    V = np.full(plan.B, nets.forward(pn.v0_net, x0s))
    D = mkt.initial_demand(scn.demand)

    n1 = grid.N + 1
    xs = np.empty((plan.B, n1))
    phis = np.empty((plan.B, n1))
    Vs = np.empty((plan.B, n1))
    zvs = np.empty((plan.B, n1))
    vs = np.empty((plan.B, n1))
    Ds = np.empty(n1)
    xs[:, 0], phis[:, 0], Vs[:, 0], Ds[0] = x, phi, V, D
    caches_zv = [] if keep_caches else None
    caches_zphi = [] if keep_caches else None

    for i in range(grid.N):
        t = i * dt
        inputs = scaler.net_inputs(t, x)
        zv, acts_zv = nets._forward_cached(pn.zv_net, inputs)
        zphi, acts_zphi = nets._forward_cached(pn.zphi_net, inputs)
        if keep_caches:
            caches_zv.append(acts_zv)
            caches_zphi.append(acts_zphi)
        if v_override is None:
            v_hat = minimizer_v(phi, zv, p.sigma0, p.c_i, pp.S, undivided)
        else:
            v_hat = v_override[:, i]
        zvs[:, i], vs[:, i] = zv, v_hat

        g = mkt.planner_cost_g(t, x, phi, v_hat, D, pp, p.c_a, p.c_i)
        drift_x = capacity_drift(t, x, phi, v_hat, p, paper_drift)
        drift_phi = mkt.driver_h(t, x, phi, p)
        x_next = em_step(x, drift_x, dt, p.sigma0, dW[:, i])
        phi = em_step(phi, drift_phi, dt, zphi, dW[:, i])
        V = em_step(V, -g, dt, zv, dW[:, i])
        D = mkt.demand_at(scn.demand, t, dt, D)
        x = x_next
        if not (np.isfinite(x).all() and np.isfinite(phi).all() and np.isfinite(V).all()):
            raise RolloutError(i, "planner state")
        xs[:, i + 1], phis[:, i + 1], Vs[:, i + 1], Ds[i + 1] = x, phi, V, D

    # terminal diagnostics: feedback evaluated at (t_N, x_N), not used in dynamics
    zv_T = nets.forward(pn.zv_net, scaler.net_inputs(grid.T, x))
    zvs[:, grid.N] = zv_T
    vs[:, grid.N] = minimizer_v(phi, zv_T, p.sigma0, p.c_i, pp.S, undivided)
    return xs, phis, Vs, zvs, vs, Ds, dW, caches_zv, caches_zphi


def rollout_planner(
    scn: StackelbergScenario,
    pn: PlannerNets,
    plan: NoisePlan,
    scaler: Optional[InputScaler] = None,
    paper_drift: bool = False,
    undivided_z: bool = False,
) -> TrajectoryBatch:
    """Simulate the planner-controlled system under the given networks."""
    scaler = scaler or scn.scaler()
    with pinned_blas():
        xs, phis, Vs, zvs, vs, Ds, _, _, _ = _roll(
            scn, pn, plan, scaler, (paper_drift, undivided_z)
        )
    t = scn.grid.times()
    prices = np.empty_like(xs)
    for i, ti in enumerate(t):
        prices[:, i] = mkt.price(scn.market.price, ti, xs[:, i])
    alphas = mkt.optimal_alpha(phis, vs, scn.market.c_a, scn.market.c_i)
    return TrajectoryBatch(
        t=t, x=xs, y=phis, alpha=alphas, price=prices, v=vs, V=Vs, zv=zvs, D=Ds
    )


def losses(batch: TrajectoryBatch) -> tuple[float, float]:
    """(mean squared terminal V, mean squared terminal phi)."""
    return float(np.mean(batch.V[:, -1] ** 2)), float(np.mean(batch.y[:, -1] ** 2))


def _grads_value(scn, pn, scaler, Vs, dW, caches_zv):
    """Gradients of mean(V_T^2) w.r.t. the (v0, zv) group.

    V enters nothing else and its recursion has unit coefficient, so the
    per-step upstream into the diffusion net is just (2 V_T / B) dW_i; the
    subsidy feedback is excluded by the stop-gradient convention.
    """
    B = Vs.shape[0]
    bV = 2.0 * Vs[:, -1] / B
    zv_grads = None
    for i in range(scn.grid.N - 1, -1, -1):
        step_grads, _ = nets.backward_cached(pn.zv_net, caches_zv[i], bV * dW[:, i])
        if zv_grads is None:
            zv_grads = step_grads
        else:
            for (gw, gb), (sw, sb) in zip(zv_grads, step_grads):
                gw += sw
                gb += sb
    x0s = np.full((B, 1), float(scaler.scale_x(scn.mu0)))
    v0_grads, _ = nets.backward(pn.v0_net, x0s, bV)
    return v0_grads, zv_grads


def _grads_field(scn, pn, scaler, paper_drift, xs, phis, dW, caches_zphi):
    """Gradients of mean(phi_T^2) w.r.t. the (phi0, zphi) group.

    Same adjoint recursion as the plain mean-field solver: the capacity
    feeds back into the field through the price and through the diffusion
    net's state argument (the subsidy is gradient-stopped).
    """
    p = scn.market
    dt = scn.grid.dt
    kappa = 1.0 / p.c_a if paper_drift else 1.0 / (2.0 * p.c_a)
    B = xs.shape[0]

    a = np.zeros(B)
    b = 2.0 * phis[:, -1] / B
    zphi_grads = None
    for i in range(scn.grid.N - 1, -1, -1):
        t = i * dt
        u = b * dW[:, i]
        step_grads, in_grads = nets.backward_cached(pn.zphi_net, caches_zphi[i], u)
        if zphi_grads is None:
            zphi_grads = step_grads
        else:
            for (gw, gb), (sw, sb) in zip(zphi_grads, step_grads):
                gw += sw
                gb += sb
        px = mkt.price_slope(p.price, t, xs[:, i])
        a, b = (
            a * (1.0 - p.delta * dt) - b * px * dt + in_grads[:, 1] * scaler.dxt_dx,
            a * kappa * dt + b * (1.0 + p.delta * dt),
        )
    x0s = np.full((B, 1), float(scaler.scale_x(scn.mu0)))
    phi0_grads, _ = nets.backward(pn.phi0_net, x0s, b)
    return phi0_grads, zphi_grads


def train_stackelberg(scn: StackelbergScenario, cfg: TrainingConfig) -> StackelbergSolution:
    """Joint training loop; deterministic given (scenario, config).

    Both losses are computed on the same rollout each iteration and the two
    parameter groups are updated simultaneously.  Divergence handling matches
    the plain solver: one restart with halved rates, then abort.
    """
    scaler = scn.scaler()
    lr_init, lr_diff, lr_value = cfg.lr_init, cfg.lr_diff, cfg.lr_value
    beta1, beta2 = cfg.betas
    flags = (cfg.paper_drift, cfg.undivided_z)

    for attempt in range(2):
        pn = _build_nets(scn, cfg, scaler)
        trace_V: list[float] = []
        trace_phi: list[float] = []
        diverged = False
        with pinned_blas():
            for k in range(cfg.iterations):
                plan = NoisePlan(seed=cfg.seed, stream=k, B=cfg.batch, N=scn.grid.N)
                try:
                    xs, phis, Vs, zvs, vs, Ds, dW, c_zv, c_zphi = _roll(
                        scn, pn, plan, scaler, flags, keep_caches=True
                    )
                except RolloutError as err:
                    trace_V.append(float("nan"))
                    trace_phi.append(float("nan"))
                    diverged = True
                    log.warning("planner rollout diverged at iteration %d (%s)", k, err)
                    break
                JV = float(np.mean(Vs[:, -1] ** 2))
                Jphi = float(np.mean(phis[:, -1] ** 2))
                trace_V.append(JV)
                trace_phi.append(Jphi)
                bad = not (np.isfinite(JV) and np.isfinite(Jphi))
                if k > 0 and not bad:
                    bad = JV > 1e6 * max(trace_V[0], 1e-12) or Jphi > 1e6 * max(trace_phi[0], 1e-12)
                if bad:
                    diverged = True
                    log.warning("planner loss diverged at iteration %d (JV=%g, Jphi=%g)", k, JV, Jphi)
                    break
                v0_g, zv_g = _grads_value(scn, pn, scaler, Vs, dW, c_zv)
                phi0_g, zphi_g = _grads_field(scn, pn, scaler, cfg.paper_drift, xs, phis, dW, c_zphi)
                nets.step(pn.v0_net, v0_g, lr_value.at(k), beta1, beta2)
                nets.step(pn.zv_net, zv_g, lr_value.at(k), beta1, beta2)
                nets.step(pn.phi0_net, phi0_g, lr_init.at(k), beta1, beta2)
                nets.step(pn.zphi_net, zphi_g, lr_diff.at(k), beta1, beta2)
        if not diverged:
            return StackelbergSolution(
                nets=pn,
                loss_V_trace=np.array(trace_V),
                loss_phi_trace=np.array(trace_phi),
                scaler=scaler,
                config=cfg,
                restarts=attempt,
            )
        if attempt == 0:
            log.warning("halving learning rates and restarting planner training")
            lr_init, lr_diff, lr_value = lr_init.halved(), lr_diff.halved(), lr_value.halved()
    raise DivergenceError("planner training diverged twice (after halving learning rates)", trace_V)


def evaluate(
    scn: StackelbergScenario, sol: StackelbergSolution, plan: Optional[NoisePlan] = None
) -> TrajectoryBatch:
    """Re-roll the trained planner system on held-out evaluation streams."""
    if plan is None:
        plan = NoisePlan(
            seed=sol.config.seed,
            stream=EVAL_STREAM_BASE,
            B=sol.config.eval_batch_factor * sol.config.batch,
            N=scn.grid.N,
        )
    return rollout_planner(
        scn, sol.nets, plan, sol.scaler, sol.config.paper_drift, sol.config.undivided_z
    )


def foc_residuals(
    batch: TrajectoryBatch,
    market: mkt.MarketParams,
    planner: mkt.PlannerParams,
    undivided_z: bool = False,
    h: float = 1e-3,
):
    """Relative central-difference residuals of the subsidy optimality condition.

    For every recorded state, differentiates
    F(v) = running-cost terms in v + l(t, x, phi, v) * zv/sigma0
    numerically at the emitted subsidy and normalises by the magnitude of
    the terms entering F'.  Returns (residuals, interior_mask): residuals of
    clamped entries are reported too but only interior ones are expected to
    vanish.
    """
    phi, zv, v = batch.y, batch.zv, batch.v
    c_a, c_i = market.c_a, market.c_i
    zv_eff = zv if undivided_z else zv / market.sigma0

    def F(vv):
        return (phi * vv - c_i * vv + vv * vv) / (2.0 * c_a) + (
            (phi - c_i + vv) / (2.0 * c_a)
        ) * zv_eff

    diff = (F(v + h) - F(v - h)) / (2.0 * h)
    scale = (np.abs(phi) + c_i + 2.0 * np.abs(v) + np.abs(zv_eff) + 1.0) / (2.0 * c_a)
    interior = np.abs(v) < planner.S - 1e-6
    return np.abs(diff) / scale, interior
