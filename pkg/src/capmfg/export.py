"""Run artifacts: CSV trajectories, JSON report, manifest, checkpoints, figures.

A completed run directory holds::

    trajectories.csv        per-step means/quantiles, fixed column order
    diagnostics.csv         per-step invariant data (bounds, feedback stats)
    report.json             scenario/config echo, seeds, arch, losses, y0
    manifest.json           version, command, outputs, wall clock, host
    checkpoints/*.txt       network weights (see nets.save_net)
    figures/*.png           rendered from the exported summary

CSV numbers are full-precision reprs: identical (config, seed) runs are
byte-identical and values survive a parse round trip exactly.
"""

from __future__ import annotations

import json
import os
import platform
import subprocess
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from . import mfg as mfg_mod
from . import model as mkt
from . import nets
from . import plots
from . import stackelberg as st_mod
from .oracles import capped_y, costate_bounds
from .training import EVAL_STREAM_BASE, TrainingConfig

__all__ = ["SolveReport", "solve_and_export", "export_planner", "verify_run", "load_checkpoints"]

_MFG_COLUMNS = ["t", "muX_mean", "muX_p05", "muX_p95", "muY_mean", "alpha_mean", "price_mean"]
_PLANNER_COLUMNS = [
    "t",
    "muX_mean",
    "muX_p05",
    "muX_p95",
    "phi_mean",
    "V_mean",
    "v_hat_mean",
    "alpha_mean",
    "D",
    "price_mean",
]


@dataclass
class SolveReport:
    """Everything a caller needs after a run: artifacts plus the solution."""

    out_dir: Path
    files: dict[str, Path]
    report: dict
    solution: object
    summary: dict


# ---------------------------------------------------------------------------
# low-level writers
# ---------------------------------------------------------------------------


def _write_csv(path: Path, columns: list[str], summary: dict) -> None:
    rows = len(summary[columns[0]])
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(",".join(columns) + "\n")
        for i in range(rows):
            fh.write(",".join(repr(float(summary[c][i])) for c in columns) + "\n")


def read_csv(path) -> dict[str, np.ndarray]:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip().split(",")
        data = [line.strip().split(",") for line in fh if line.strip()]
    cols = {name: np.array([float(row[i]) for row in data]) for i, name in enumerate(header)}
    return cols


def _atomic_json(path: Path, payload: dict) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _version_string() -> str:
    try:
        desc = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=5,
            cwd=os.path.dirname(os.path.abspath(__file__)),
        )
        git = desc.stdout.strip() if desc.returncode == 0 else ""
    except Exception:
        git = ""
    return f"capmfg {__version__}" + (f" ({git})" if git else "")


def _manifest(out_dir: Path, resolved: dict, seed: int, outputs: list[str], wall: float) -> dict:
    return {
        "version": _version_string(),
        "command": sys.argv,
        "config": resolved,
        "seeds": {
            "master": seed,
            "training_streams": "0..iterations-1",
            "eval_stream": EVAL_STREAM_BASE,
        },
        "outputs": sorted(outputs),
        "wall_clock_s": wall,
        "host": {
            "platform": platform.platform(),
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    }


def _arch_echo(net: nets.NetParams) -> dict:
    return {
        "input_dim": net.arch.input_dim,
        "hidden_widths": list(net.arch.hidden_widths),
        "activation": net.arch.activation,
        "output_scale": net.arch.output_scale,
    }


def _bounds_for(market: mkt.MarketParams, t: np.ndarray, T: float):
    return costate_bounds(t, T, market.delta, market.c_p, mkt.price_cap(market.price))


# ---------------------------------------------------------------------------
# plain mean-field run
# ---------------------------------------------------------------------------


def solve_and_export(
    scn: mfg_mod.MfgScenario,
    cfg: TrainingConfig,
    out_dir,
    resolved_config: Optional[dict] = None,
    figures: bool = True,
    reuse_checkpoints: Optional[Path] = None,
) -> SolveReport:
    """Train (or reload), evaluate on held-out streams, write all artifacts."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "checkpoints").mkdir(exist_ok=True)
    start = time.perf_counter()

    if reuse_checkpoints is not None:
        y0_net, z_net = load_checkpoints(Path(reuse_checkpoints), ["y0_net", "z_net"])
        sol = mfg_mod.MfgSolution(
            y0=float(
                nets.forward(y0_net, np.array([float(scn.scaler().scale_x(scn.mu0))]))
            ),
            y0_net=y0_net,
            z_net=z_net,
            loss_trace=np.array([]),
            scaler=scn.scaler(),
            config=cfg,
        )
    else:
        sol = mfg_mod.train(scn, cfg)
    batch = mfg_mod.evaluate(scn, sol)
    summary = batch.summary()
    wall = time.perf_counter() - start

    files: dict[str, Path] = {}
    files["trajectories"] = out_dir / "trajectories.csv"
    _write_csv(files["trajectories"], _MFG_COLUMNS, summary)

    y_l, y_u = _bounds_for(scn.market, batch.t, scn.grid.T)
    diag = {
        "t": batch.t,
        "y_l": y_l,
        "y_u": y_u,
        "muY_min": batch.y.min(axis=0),
        "muY_max": batch.y.max(axis=0),
    }
    files["diagnostics"] = out_dir / "diagnostics.csv"
    _write_csv(files["diagnostics"], list(diag.keys()), diag)

    files["y0_net"] = out_dir / "checkpoints" / "y0_net.txt"
    files["z_net"] = out_dir / "checkpoints" / "z_net.txt"
    nets.save_net(files["y0_net"], sol.y0_net)
    nets.save_net(files["z_net"], sol.z_net)

    report = {
        "kind": "mfg",
        "config": resolved_config or {},
        "seeds": {"master": cfg.seed, "eval_stream": EVAL_STREAM_BASE},
        "arch": {"y0_net": _arch_echo(sol.y0_net), "z_net": _arch_echo(sol.z_net)},
        "input_scaling": {"T": sol.scaler.T, "x_lo": sol.scaler.x_lo, "x_hi": sol.scaler.x_hi},
        "y0": sol.y0,
        "final_loss": float(sol.loss_trace[-1]) if len(sol.loss_trace) else None,
        "eval_loss": mfg_mod.loss(batch),
        "loss_trace": [float(v) for v in sol.loss_trace],
        "restarts": sol.restarts,
        "wall_clock_s": wall,
    }
    files["report"] = out_dir / "report.json"
    _atomic_json(files["report"], report)

    if figures:
        fig_dir = out_dir / "figures"
        fig_dir.mkdir(exist_ok=True)
        files["figure_trajectories"] = fig_dir / "trajectories.png"
        plots.render_mfg_figures(files["figure_trajectories"], summary, bounds=(y_l, y_u))
        if len(sol.loss_trace):
            files["figure_loss"] = fig_dir / "loss.png"
            plots.render_loss_figure(files["figure_loss"], {"terminal loss": sol.loss_trace})

    files["manifest"] = out_dir / "manifest.json"
    _atomic_json(
        files["manifest"],
        _manifest(out_dir, resolved_config or {}, cfg.seed, [str(p.relative_to(out_dir)) for p in files.values()], wall),
    )
    return SolveReport(out_dir=out_dir, files=files, report=report, solution=sol, summary=summary)


# ---------------------------------------------------------------------------
# planner run
# ---------------------------------------------------------------------------


def export_planner(
    scn: st_mod.StackelbergScenario,
    cfg: TrainingConfig,
    out_dir,
    resolved_config: Optional[dict] = None,
    figures: bool = True,
    reuse_checkpoints: Optional[Path] = None,
) -> SolveReport:
    """Planner-side twin of solve_and_export."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "checkpoints").mkdir(exist_ok=True)
    start = time.perf_counter()

    names = ["v0_net", "phi0_net", "zv_net", "zphi_net"]
    if reuse_checkpoints is not None:
        loaded = load_checkpoints(Path(reuse_checkpoints), names)
        pnets = st_mod.PlannerNets(*loaded)
        sol = st_mod.StackelbergSolution(
            nets=pnets,
            loss_V_trace=np.array([]),
            loss_phi_trace=np.array([]),
            scaler=scn.scaler(),
            config=cfg,
        )
    else:
        sol = st_mod.train_stackelberg(scn, cfg)
    batch = st_mod.evaluate(scn, sol)
    summary = batch.summary()
    wall = time.perf_counter() - start

    files: dict[str, Path] = {}
    files["trajectories"] = out_dir / "trajectories.csv"
    _write_csv(files["trajectories"], _PLANNER_COLUMNS, summary)

    y_l, y_u = _bounds_for(scn.market, batch.t, scn.grid.T)
    residuals, interior = st_mod.foc_residuals(batch, scn.market, scn.planner, cfg.undivided_z)
    with np.errstate(invalid="ignore"):
        foc_max = np.where(interior.any(axis=0), np.max(np.where(interior, residuals, 0.0), axis=0), 0.0)
    diag = {
        "t": batch.t,
        "y_l": y_l,
        "y_u": y_u,
        "phi_min": batch.y.min(axis=0),
        "phi_max": batch.y.max(axis=0),
        "zv_mean": batch.zv.mean(axis=0),
        "v_hat_min": batch.v.min(axis=0),
        "v_hat_max": batch.v.max(axis=0),
        "interior_frac": interior.mean(axis=0),
        "foc_resid_max_interior": foc_max,
    }
    files["diagnostics"] = out_dir / "diagnostics.csv"
    _write_csv(files["diagnostics"], list(diag.keys()), diag)

    all_nets = [sol.nets.v0_net, sol.nets.phi0_net, sol.nets.zv_net, sol.nets.zphi_net]
    for name, net in zip(names, all_nets):
        files[name] = out_dir / "checkpoints" / f"{name}.txt"
        nets.save_net(files[name], net)

    sigma0 = scn.market.sigma0
    lip_estimate = _vhat_lipschitz_estimate(scn, sol, batch)
    report = {
        "kind": "stackelberg",
        "config": resolved_config or {},
        "planner": {"lambda_d": scn.planner.lambda_d, "S": scn.planner.S},
        "seeds": {"master": cfg.seed, "eval_stream": EVAL_STREAM_BASE},
        "arch": {name: _arch_echo(net) for name, net in zip(names, all_nets)},
        "input_scaling": {"T": sol.scaler.T, "x_lo": sol.scaler.x_lo, "x_hi": sol.scaler.x_hi},
        "V0": sol.V0(scn.mu0),
        "phi0": sol.phi0(scn.mu0),
        "final_loss_V": float(sol.loss_V_trace[-1]) if len(sol.loss_V_trace) else None,
        "final_loss_phi": float(sol.loss_phi_trace[-1]) if len(sol.loss_phi_trace) else None,
        "loss_V_trace": [float(v) for v in sol.loss_V_trace],
        "loss_phi_trace": [float(v) for v in sol.loss_phi_trace],
        "v_hat_lipschitz_estimate": lip_estimate,
        "sigma0": sigma0,
        "restarts": sol.restarts,
        "wall_clock_s": wall,
    }
    files["report"] = out_dir / "report.json"
    _atomic_json(files["report"], report)

    if figures:
        fig_dir = out_dir / "figures"
        fig_dir.mkdir(exist_ok=True)
        files["figure_trajectories"] = fig_dir / "trajectories.png"
        plots.render_planner_figures(files["figure_trajectories"], summary, scn.planner.S)
        if len(sol.loss_V_trace):
            files["figure_loss"] = fig_dir / "loss.png"
            plots.render_loss_figure(
                files["figure_loss"],
                {"terminal V loss": sol.loss_V_trace, "terminal phi loss": sol.loss_phi_trace},
            )

    files["manifest"] = out_dir / "manifest.json"
    _atomic_json(
        files["manifest"],
        _manifest(out_dir, resolved_config or {}, cfg.seed, [str(p.relative_to(out_dir)) for p in files.values()], wall),
    )
    return SolveReport(out_dir=out_dir, files=files, report=report, solution=sol, summary=summary)


def _vhat_lipschitz_estimate(scn, sol, batch) -> float:
    """Crude sup-slope estimate of the subsidy feedback in the state.

    |dv/dx| <= (|d(zv)/dx|/sigma0 + |phi_x|)/2 with phi_x read off as
    zphi/sigma0; sampled on the visited states.  Reported, not enforced.
    """
    sigma0 = scn.market.sigma0
    if sigma0 == 0.0:
        return float("nan")
    xs = np.linspace(batch.x.min(), batch.x.max(), 64)
    worst = 0.0
    for t in batch.t[:: max(1, len(batch.t) // 8)]:
        inputs = sol.scaler.net_inputs(float(t), xs)
        _, grads_in = nets.backward(sol.nets.zv_net, inputs, np.ones(len(xs)))
        dzv_dx = np.abs(grads_in[:, 1]) * sol.scaler.dxt_dx
        zphi = nets.forward(sol.nets.zphi_net, inputs)
        worst = max(worst, float(np.max(dzv_dx / sigma0 + np.abs(zphi) / sigma0) / 2.0))
    return worst


# ---------------------------------------------------------------------------
# checkpoints and verification
# ---------------------------------------------------------------------------


def load_checkpoints(run_dir: Path, names: list[str]) -> list[nets.NetParams]:
    ckpt = run_dir / "checkpoints"
    missing = [n for n in names if not (ckpt / f"{n}.txt").exists()]
    if missing:
        raise FileNotFoundError(f"missing checkpoints in {ckpt}: {missing}")
    return [nets.load_net(ckpt / f"{n}.txt") for n in names]


def verify_run(run_dir) -> list[tuple[str, bool, str]]:
    """Recompute invariants from a completed run directory.

    Returns (check, passed, detail) tuples; clamp/bounds/oracle checks are
    recomputed from the stored CSVs (the subsidy optimality residual is
    re-asserted from the per-step maxima persisted in diagnostics.csv, since
    per-sample states are not exported).
    """
    run_dir = Path(run_dir)
    checks: list[tuple[str, bool, str]] = []

    report_path = run_dir / "report.json"
    try:
        with open(report_path, "r", encoding="utf-8") as fh:
            report = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        return [("report readable", False, str(err))]
    checks.append(("report readable", True, str(report_path)))

    try:
        traj = read_csv(run_dir / "trajectories.csv")
        diag = read_csv(run_dir / "diagnostics.csv")
    except (OSError, ValueError, IndexError) as err:
        checks.append(("csv readable", False, str(err)))
        return checks
    checks.append(("csv readable", True, "trajectories.csv, diagnostics.csv"))

    config = report.get("config", {})
    market = config.get("market", {})
    price_sec = config.get("price", {})
    delta = float(market.get("delta", 0.005))
    c_p = float(market.get("c_p", 0.0))
    T = float(traj["t"][-1])
    kind = price_sec.get("kind", "constant")
    if kind == "capacity":
        p_cap = float(price_sec["p0"]) + float(price_sec["p1"]) / float(price_sec["eps2"]) ** float(price_sec["r"])
    else:
        p_cap = float(price_sec.get("M", np.inf))

    y_col = "muY_mean" if "muY_mean" in traj else "phi_mean"
    y_l, y_u = costate_bounds(traj["t"], T, delta, c_p, p_cap)
    eps = 0.02 * float(y_u[0])
    lo_ok = bool(np.all(traj[y_col] >= y_l - eps))
    hi_ok = bool(np.all(traj[y_col] <= y_u + eps))
    worst = float(np.max(np.maximum(y_l - eps - traj[y_col], traj[y_col] - y_u - eps)))
    checks.append(
        (
            "costate bounds",
            lo_ok and hi_ok,
            f"{y_col} within [y_l-eps, y_u+eps], eps={eps:.4g}, worst excess {worst:.4g}",
        )
    )
    # per-sample extremes from diagnostics, when present
    lo_key, hi_key = ("muY_min", "muY_max") if "muY_min" in diag else ("phi_min", "phi_max")
    if lo_key in diag:
        samp_ok = bool(np.all(diag[lo_key] >= y_l - eps) and np.all(diag[hi_key] <= y_u + eps))
        checks.append(("costate bounds (per-sample extremes)", samp_ok, f"{lo_key}/{hi_key} inside band"))

    term_ok = bool(abs(traj[y_col][-1]) <= eps)
    checks.append(("terminal condition", term_ok, f"|{y_col}(T)| = {abs(traj[y_col][-1]):.4g} <= {eps:.4g}"))

    price_ok = bool(np.all(traj["price_mean"] > 0.0) and np.all(traj["price_mean"] <= p_cap + 1e-9))
    checks.append(("price in (0, cap]", price_ok, f"cap {p_cap:.6g}"))

    if np.all(traj["price_mean"] >= p_cap - 1e-9) and np.isfinite(p_cap):
        oracle = np.array([capped_y(float(t), T, delta, p_cap, c_p) for t in traj["t"]])
        delta_max = float(np.max(np.abs(traj[y_col] - oracle)))
        checks.append(
            ("capped-price oracle delta", delta_max <= eps, f"sup |{y_col} - closed form| = {delta_max:.4g} <= {eps:.4g}")
        )

    if "v_hat_mean" in traj:
        S = float(report.get("planner", {}).get("S", config.get("planner", {}).get("S", 0.0)))
        clamp_ok = bool(
            np.all(np.abs(traj["v_hat_mean"]) <= S + 1e-9)
            and np.all(diag["v_hat_min"] >= -S - 1e-9)
            and np.all(diag["v_hat_max"] <= S + 1e-9)
        )
        checks.append(("subsidy clamp", clamp_ok, f"all emitted v within [-{S}, {S}]"))
        foc_ok = bool(np.all(diag["foc_resid_max_interior"] < 1e-6))
        checks.append(
            (
                "subsidy optimality residual",
                foc_ok,
                f"max interior residual {float(np.max(diag['foc_resid_max_interior'])):.3g} < 1e-6",
            )
        )
    return checks
