"""Command-line front end.

Commands::

    capmfg solve-mfg CONFIG [--seed N] [--out DIR] [...]
    capmfg solve-stackelberg CONFIG [--seed N] [--out DIR] [...]
    capmfg oracle capped-y|crossing|shoot|phi-fd [...]
    capmfg verify RUN_DIR

Exit codes: 0 success; 1 configuration/parameter error (the message names
the offending key); 2 numerical divergence; 3 verification failure.

Human-readable text goes to stdout; machine-readable data goes to files.
The MFG_THREADS environment variable caps internal worker pools and never
changes results (the solvers run vectorised with BLAS pinned to one thread).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import export, mfg, oracles, scenario
from . import model as mkt
from .training import DivergenceError, RolloutError, Schedule, worker_cap

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGED = 2
EXIT_VERIFY = 3


def _add_solve_args(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("config", help="scenario JSON file")
    sub.add_argument("--seed", type=int, default=None, help="override the file's master seed")
    sub.add_argument("--out", default="run", help="output directory (default: ./run)")
    sub.add_argument("--iterations", type=int, default=None, help="override training iterations")
    sub.add_argument("--batch", type=int, default=None, help="override training batch size")
    sub.add_argument("--lr", type=float, default=None, help="override every learning-rate schedule with a constant")
    sub.add_argument("--compat-paper-drift", action="store_true", help="use the 1/c_a capacity-drift variant")
    sub.add_argument("--compat-undivided-z", action="store_true", help="skip the sigma0 division in the subsidy rule")
    sub.add_argument("--from-checkpoint", default=None, metavar="RUN_DIR", help="skip training, reload saved networks")
    sub.add_argument("--no-figures", action="store_true", help="skip figure rendering")


def _apply_overrides(cfg, args):
    if args.iterations is not None:
        cfg.iterations = args.iterations
    if args.batch is not None:
        cfg.batch = args.batch
    if args.lr is not None:
        const = Schedule(args.lr)
        cfg.lr_init = cfg.lr_diff = cfg.lr_value = const
    if args.compat_paper_drift:
        cfg.paper_drift = True
    if args.compat_undivided_z:
        cfg.undivided_z = True
    return cfg


def _cmd_solve_mfg(args) -> int:
    doc = scenario.load_document(args.config)
    scn, cfg = scenario.build_mfg(doc, seed_override=args.seed)
    cfg = _apply_overrides(cfg, args)
    result = export.solve_and_export(
        scn,
        cfg,
        args.out,
        resolved_config=scenario.resolved_echo(doc, cfg),
        figures=not args.no_figures,
        reuse_checkpoints=Path(args.from_checkpoint) if args.from_checkpoint else None,
    )
    rep = result.report
    print(f"y0 = {rep['y0']:.6f} $/MWh")
    if rep["final_loss"] is not None:
        print(f"final training loss = {rep['final_loss']:.6g}")
    print(f"evaluation loss = {rep['eval_loss']:.6g}")
    print(f"outputs in {result.out_dir}")
    return EXIT_OK


def _cmd_solve_stackelberg(args) -> int:
    doc = scenario.load_document(args.config)
    scn, cfg = scenario.build_stackelberg(doc, seed_override=args.seed)
    cfg = _apply_overrides(cfg, args)
    result = export.export_planner(
        scn,
        cfg,
        args.out,
        resolved_config=scenario.resolved_echo(doc, cfg),
        figures=not args.no_figures,
        reuse_checkpoints=Path(args.from_checkpoint) if args.from_checkpoint else None,
    )
    rep = result.report
    print(f"V0 = {rep['V0']:.6f} $   phi0 = {rep['phi0']:.6f} $/MWh")
    if rep["final_loss_V"] is not None:
        print(f"final losses: V {rep['final_loss_V']:.6g}   phi {rep['final_loss_phi']:.6g}")
    print(f"outputs in {result.out_dir}")
    return EXIT_OK


def _cmd_oracle(args) -> int:
    if args.oracle_cmd == "capped-y":
        val = oracles.capped_y(args.t, args.T, args.delta, args.M, args.c_p)
        print(f"{val:.10g}")
        return EXIT_OK
    if args.oracle_cmd == "crossing":
        try:
            val = oracles.alpha_crossing(args.T, args.delta, args.M, args.c_p, args.c_i)
        except oracles.NoCrossingError as err:
            print(f"error: {err}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"{val:.10g}")
        return EXIT_OK
    if args.oracle_cmd == "shoot":
        doc = scenario.load_document(args.config)
        scn, _ = scenario.build_mfg(doc)
        if scn.market.sigma0 != 0.0:
            print(
                "error: the shooting oracle solves the vanishing-noise system; "
                f"set market.sigma0 = 0 in the config (got {scn.market.sigma0})",
                file=sys.stderr,
            )
            return EXIT_CONFIG
        try:
            sol = oracles.shoot_deterministic(scn, n_mult=args.n_mult)
        except oracles.ShootingError as err:
            print(f"error: {err}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"y0 = {sol.y0:.10g}")
        if args.out:
            with open(args.out, "w", encoding="ascii", newline="\n") as fh:
                fh.write("t,x,y\n")
                for t, x, y in zip(sol.t, sol.x, sol.y):
                    fh.write(f"{t!r},{x!r},{y!r}\n")
            print(f"path written to {args.out}")
        return EXIT_OK
    if args.oracle_cmd == "phi-fd":
        doc = scenario.load_document(args.config)
        scn, _ = scenario.build_mfg(doc)
        if args.x_lo is not None and args.x_hi is not None:
            x_lo, x_hi = args.x_lo, args.x_hi
        else:
            x_lo, x_hi = scn.scaler().x_lo, scn.scaler().x_hi
        try:
            table = oracles.solve_phi_fd(scn.market, scn.grid.T, x_lo, x_hi, nx=args.nx)
        except (oracles.StabilityError, ValueError) as err:
            print(f"error: {err}", file=sys.stderr)
            return EXIT_CONFIG
        table.to_csv(args.out)
        print(f"mesh ({len(table.t)} x {len(table.x)}) written to {args.out}")
        return EXIT_OK
    raise AssertionError(f"unhandled oracle subcommand {args.oracle_cmd!r}")


def _cmd_verify(args) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        print(f"error: {run_dir} is not a run directory", file=sys.stderr)
        return EXIT_CONFIG
    checks = export.verify_run(run_dir)
    width = max(len(name) for name, _, _ in checks)
    failures = 0
    for name, ok, detail in checks:
        status = "PASS" if ok else "FAIL"
        print(f"{status}  {name.ljust(width)}  {detail}")
        failures += 0 if ok else 1
    if failures:
        print(f"{failures} invariant check(s) failed")
        return EXIT_VERIFY
    print("all invariant checks passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capmfg",
        description="Mean-field-game solvers for renewable capacity markets.",
        epilog="MFG_THREADS caps internal worker pools without changing results "
        f"(currently {worker_cap()}).",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    _add_solve_args(subs.add_parser("solve-mfg", help="train the mean-field equilibrium solver"))
    _add_solve_args(subs.add_parser("solve-stackelberg", help="train the social-planner solver"))

    oracle = subs.add_parser("oracle", help="independent ground-truth solvers")
    osubs = oracle.add_subparsers(dest="oracle_cmd", required=True)

    cy = osubs.add_parser("capped-y", help="closed-form costate under a pinned price")
    cy.add_argument("--t", type=float, required=True)
    cy.add_argument("--T", type=float, required=True)
    cy.add_argument("--delta", type=float, default=0.005)
    cy.add_argument("--M", type=float, default=300.0)
    cy.add_argument("--c-p", dest="c_p", type=float, default=5.65)

    cr = osubs.add_parser("crossing", help="closed-form sign change of the installation rate")
    cr.add_argument("--T", type=float, required=True)
    cr.add_argument("--delta", type=float, default=0.005)
    cr.add_argument("--M", type=float, default=300.0)
    cr.add_argument("--c-p", dest="c_p", type=float, default=5.65)
    cr.add_argument("--c-i", dest="c_i", type=float, default=37.35)

    sh = osubs.add_parser("shoot", help="two-point boundary solve of the vanishing-noise system")
    sh.add_argument("config", help="scenario JSON with market.sigma0 = 0")
    sh.add_argument("--n-mult", type=int, default=10, help="oracle steps per solver step")
    sh.add_argument("--out", default=None, help="optional CSV path for the (t, x, y) path")

    fd = osubs.add_parser("phi-fd", help="finite-difference solve of the decoupling-field PDE")
    fd.add_argument("config", help="scenario JSON")
    fd.add_argument("--out", required=True, help="CSV path for the (t, x, phi) mesh dump")
    fd.add_argument("--nx", type=int, default=201)
    fd.add_argument("--x-lo", type=float, default=None)
    fd.add_argument("--x-hi", type=float, default=None)

    ver = subs.add_parser("verify", help="recompute invariants of a completed run")
    ver.add_argument("run_dir")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "solve-mfg":
            return _cmd_solve_mfg(args)
        if args.command == "solve-stackelberg":
            return _cmd_solve_stackelberg(args)
        if args.command == "oracle":
            return _cmd_oracle(args)
        if args.command == "verify":
            return _cmd_verify(args)
    except scenario.ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, RolloutError) as err:
        print(f"error: numerical divergence: {err}", file=sys.stderr)
        if isinstance(err, DivergenceError) and err.trace:
            tail = ", ".join(f"{v:.3g}" for v in err.trace[-5:])
            print(f"loss trace tail: {tail}", file=sys.stderr)
        return EXIT_DIVERGED
    raise AssertionError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
