"""Acceptance suite: each test enforces one numbered criterion at its stated
tolerance and prints one PASS/FAIL line (run with -s or check the -v report).

The expensive trained solutions come from session fixtures in conftest.py and
are shared with the module tests.
"""

import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from capmfg import mfg, nets, stackelberg as st
from capmfg.model import ConstantPrice, price_cap
from capmfg.noise import Grid, NoisePlan
from capmfg.oracles import (
    alpha_crossing,
    capped_y,
    costate_bounds,
    shoot_deterministic,
    solve_phi_fd,
)
from capmfg.training import Schedule, TrainingConfig

from conftest import CAPPED_Y0_T1, solar_market


def _report(criterion: int, passed: bool, detail: str) -> None:
    print(f"ACCEPTANCE {criterion}: {'PASS' if passed else 'FAIL'} - {detail}")
    assert passed, detail


def _mean_crossing(batch) -> float:
    alpha = batch.alpha.mean(axis=0)
    signs = np.sign(alpha)
    idx = np.where(signs[:-1] != signs[1:])[0]
    assert len(idx) >= 1, "mean installation rate never changes sign"
    i = int(idx[0])
    return float(batch.t[i] + (batch.t[i + 1] - batch.t[i]) * alpha[i] / (alpha[i] - alpha[i + 1]))


def test_criterion_1_capped_price_costate(exam02_solution):
    """Trained y0 vs closed form (M-c_p)(1-e^{-delta T})/delta within 1%."""
    _, sol, _ = exam02_solution
    target = capped_y(0.0, 1.0, 0.005, 300.0, 5.65)
    rel = abs(sol.y0 - target) / target
    _report(1, rel < 0.01, f"y0 = {sol.y0:.4f} vs closed form {target:.4f} (rel err {rel:.2e} < 1%)")


def test_criterion_2_sign_crossing(exam02_solution, exam04_solution):
    """Mean installation rate changes sign inside the stated windows."""
    _, _, batch1 = exam02_solution
    _, _, batch2 = exam04_solution
    t1 = _mean_crossing(batch1)
    t2 = _mean_crossing(batch2)
    ok = 0.85 <= t1 <= 0.89 and 1.85 <= t2 <= 1.89
    oracle1 = alpha_crossing(1.0, 0.005, 300.0, 5.65, 37.35)
    oracle2 = alpha_crossing(2.0, 0.005, 300.0, 5.65, 37.35)
    _report(
        2,
        ok,
        f"crossings t1 = {t1:.4f} in [0.85, 0.89] (closed form {oracle1:.4f}), "
        f"t2 = {t2:.4f} in [1.85, 1.89] (closed form {oracle2:.4f})",
    )


def test_criterion_3_gradient_correctness():
    """backward vs central finite differences on 100 random small nets."""
    rng = np.random.default_rng(2024)
    worst = 0.0
    for trial in range(100):
        widths = tuple(int(w) for w in rng.integers(1, 9, size=rng.integers(0, 3)))
        arch = nets.Arch(input_dim=int(rng.integers(1, 3)), hidden_widths=widths)
        params = nets.init(arch, seed=trial)
        x = rng.normal(size=(3, arch.input_dim))
        u = rng.normal(size=3)
        analytic, _ = nets.backward(params, x, u)
        h = 1e-6
        for k in range(len(params.weights)):
            for arr, grads in ((params.weights[k], analytic[k][0]), (params.biases[k], analytic[k][1])):
                flat = arr.reshape(-1)
                gflat = grads.reshape(-1)
                for idx in range(flat.size):
                    flat[idx] += h
                    up = float(np.dot(nets.forward(params, x), u))
                    flat[idx] -= 2 * h
                    dn = float(np.dot(nets.forward(params, x), u))
                    flat[idx] += h
                    fd = (up - dn) / (2 * h)
                    worst = max(worst, abs(gflat[idx] - fd) / max(abs(fd), 1e-7))
    _report(3, worst < 1e-5, f"max relative gradient error {worst:.2e} < 1e-5 over 100 nets")


def _det_check(criterion_batch, scn):
    p0 = mfg.MfgScenario(
        market=solar_market(0.0, price=scn.market.price), grid=scn.grid, mu0=scn.mu0
    )
    sh = shoot_deterministic(p0)
    stride = len(sh.t) // scn.grid.N
    xs_o, ys_o = sh.x[::stride], sh.y[::stride]
    xm, ym = criterion_batch.x.mean(axis=0), criterion_batch.y.mean(axis=0)
    ex = float(np.abs(xm - xs_o).max())
    ey = float(np.abs(ym - ys_o).max())
    xr = float(xs_o.max() - xs_o.min())
    yr = float(ys_o.max() - ys_o.min())
    return ex, 0.01 * xr, ey, 0.01 * yr


def test_criterion_4_deterministic_limit(det_limit_marginal, det_limit_capacity):
    """sigma0 = 1e-3 solve vs shooting oracle, sup norm < 1% of path range."""
    details = []
    ok = True
    for label, (scn, _, batch) in (("marginal", det_limit_marginal), ("capacity", det_limit_capacity)):
        ex, tx, ey, ty = _det_check(batch, scn)
        ok = ok and ex < tx and ey < ty
        details.append(f"{label}: sup|dx| {ex:.3f} < {tx:.3f}, sup|dy| {ey:.4f} < {ty:.4f}")
    _report(4, ok, "; ".join(details))


def test_criterion_5_costate_bounds(exam02_solution):
    """Every evaluation-rollout state inside the a-priori band (eps = 2% of y_u(0))."""
    scn, _, batch = exam02_solution
    y_l, y_u = costate_bounds(batch.t, scn.grid.T, scn.market.delta, scn.market.c_p, price_cap(scn.market.price))
    eps = 0.02 * float(y_u[0])
    inside = (batch.y >= y_l[None, :] - eps) & (batch.y <= y_u[None, :] + eps)
    frac = float(inside.mean())
    _report(5, bool(inside.all()), f"{frac:.6%} of {batch.y.size} states inside band (eps = {eps:.3f})")


def test_criterion_6_pde_cross_check(exam02_solution):
    """FD decoupling field: closed form under constant price; trained rollout
    agreement under the marginal-capacity price."""
    pm = solar_market(100.0, price=ConstantPrice(M=300.0))
    table = solve_phi_fd(pm, T=1.0, x_lo=400.0, x_hi=1800.0, nx=141)
    exact = np.array([capped_y(t, 1.0, pm.delta, 300.0, pm.c_p) for t in table.t])
    rel_fd = float((np.abs(table.phi[:-1] - exact[:-1, None]) / exact[:-1, None]).max())

    scn, _, batch = exam02_solution
    lo = float(batch.x.min()) - 150.0
    hi = float(batch.x.max()) + 150.0
    table2 = solve_phi_fd(scn.market, scn.grid.T, lo, hi, nx=201)
    sup = 0.0
    for i, t in enumerate(batch.t):
        sup = max(sup, float(np.abs(table2(t, batch.x[:, i]) - batch.y[:, i]).max()))
    tol = 0.02 * CAPPED_Y0_T1
    ok = rel_fd < 1e-4 and sup < tol
    _report(
        6,
        ok,
        f"constant price max rel err {rel_fd:.2e} < 1e-4; along-path sup {sup:.3f} < {tol:.3f}",
    )


def test_criterion_7_stackelberg_degeneracy():
    """lambda_d = 0, S = 0 planner rollout equals the plain rollout exactly."""
    from capmfg.model import ConstantDemand, PlannerParams

    market = solar_market(25.0)
    grid = Grid(T=1.0, N=40)
    scn = st.StackelbergScenario(
        market=market, grid=grid, mu0=1000.0, demand=ConstantDemand(D=1500.0), planner=PlannerParams(lambda_d=0.0, S=0.0)
    )
    mscn = mfg.MfgScenario(market=market, grid=grid, mu0=1000.0)
    scaler = mscn.scaler()
    cfg = TrainingConfig(batch=64, iterations=1, seed=13)
    y0_net, z_net = mfg._build_nets(mscn, cfg, scaler)
    z_net.weights[-1][:] = 0.4
    pn = st._build_nets(scn, cfg, scaler)
    pn.phi0_net.weights = [w.copy() for w in y0_net.weights]
    pn.phi0_net.biases = [b.copy() for b in y0_net.biases]
    pn.zphi_net.weights = [w.copy() for w in z_net.weights]
    pn.zphi_net.biases = [b.copy() for b in z_net.biases]
    plan = NoisePlan(seed=21, stream=2, B=64, N=40)
    plain = mfg.rollout(mscn, y0_net, z_net, plan, scaler)
    planner = st.rollout_planner(scn, pn, plan, scaler)
    same = (
        np.array_equal(plain.x, planner.x)
        and np.array_equal(plain.y, planner.y)
        and np.array_equal(plain.alpha, planner.alpha)
        and np.array_equal(plain.price, planner.price)
    )
    _report(7, same and bool(np.all(planner.v == 0.0)), "trajectories identical bitwise, subsidy identically zero")


def test_criterion_8_foc_residual(ed01_run, es01_run):
    """Interior subsidies satisfy the first-order condition; clamp everywhere."""
    ok = True
    details = []
    for label, (scn, _, batch) in (("ED01", ed01_run), ("ES01", es01_run)):
        residuals, interior = st.foc_residuals(batch, scn.market, scn.planner)
        clamp = bool(np.all(np.abs(batch.v) <= scn.planner.S + 1e-12))
        worst = float(residuals[interior].max()) if interior.any() else 0.0
        ok = ok and clamp and worst < 1e-6
        details.append(f"{label}: max interior residual {worst:.2e}, clamp {'ok' if clamp else 'violated'}")
    _report(8, ok, "; ".join(details))


def test_criterion_9_policy_direction(ed01_run, es01_run, ed01_unsubsidised):
    """Subsidy positive (tax negative) initially; subsidised terminal gap smaller."""
    _, _, ed_batch = ed01_run
    _, _, es_batch = es01_run
    _, _, unsub_batch = ed01_unsubsidised
    v_ed0 = float(ed_batch.v.mean(axis=0)[0])
    v_es0 = float(es_batch.v.mean(axis=0)[0])
    gap_planner = abs(1500.0 - float(ed_batch.x.mean(axis=0)[-1]))
    gap_unsub = abs(1500.0 - float(unsub_batch.x.mean(axis=0)[-1]))
    ok = v_ed0 > 0.0 and v_es0 < 0.0 and gap_planner < gap_unsub
    _report(
        9,
        ok,
        f"ED01 v(0) = {v_ed0:.1f} > 0, ES01 v(0) = {v_es0:.1f} < 0, "
        f"terminal gap {gap_planner:.1f} < unsubsidised {gap_unsub:.1f}",
    )


def test_criterion_10_reproducibility(tmp_path):
    """Identical (config, seed) -> byte-identical CSVs across runs and thread caps."""
    doc = {
        "mu0": 1000.0,
        "market": {"delta": 0.005, "sigma": 0.0, "sigma0": 100.0, "c_p": 5.65, "c_i": 37.35, "c_a": 1.0},
        "price": {"kind": "marginal_capacity", "M": 300.0, "p0": 30.0, "p1": 27500.0, "r": 1.0, "D": 1500.0},
        "grid": {"T": 1.0, "N": 20},
        "training": {"batch": 64, "iterations": 25, "lr_init": 1.0, "lr_diff": 0.003},
        "seeds": {"master": 42},
    }
    cfg_path = tmp_path / "scenario.json"
    cfg_path.write_text(json.dumps(doc))

    def run(out: Path, threads: str) -> bytes:
        env = dict(os.environ, MFG_THREADS=threads)
        proc = subprocess.run(
            [sys.executable, "-m", "capmfg.cli", "solve-mfg", str(cfg_path), "--out", str(out), "--no-figures"],
            capture_output=True,
            text=True,
            env=env,
        )
        assert proc.returncode == 0, proc.stderr
        return (out / "trajectories.csv").read_bytes()

    first = run(tmp_path / "r1", "1")
    second = run(tmp_path / "r2", "1")
    many = run(tmp_path / "r3", str(os.cpu_count() or 8))
    ok = first == second == many
    _report(10, ok, f"three runs produced identical CSV bytes ({len(first)} bytes)")
