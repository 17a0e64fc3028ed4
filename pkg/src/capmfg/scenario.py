"""Scenario files: JSON schema, strict validation, construction.

One document describes either solver's run: sections ``market``, ``price``,
``grid``, ``training``, ``seeds`` plus the top-level initial capacity
``mu0``; planner runs additionally need ``demand`` and ``planner``.
Unknown keys are rejected and every error names the offending key.
"""

from __future__ import annotations

import json
from typing import Any, Optional

from . import model as mkt
from .mfg import MfgScenario
from .noise import Grid
from .stackelberg import StackelbergScenario
from .training import Schedule, TrainingConfig

__all__ = ["ConfigError", "load_document", "build_mfg", "build_stackelberg", "resolved_echo"]


class ConfigError(ValueError):
    """Configuration problem; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"config error at '{key}': {message}")
        self.key = key


def _require(doc: dict, key: str, where: str = "") -> Any:
    if key not in doc:
        raise ConfigError(f"{where}{key}", "missing required key")
    return doc[key]


def _check_keys(doc: dict, allowed: set[str], where: str) -> None:
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"{where}{key}", "unknown key")


def _number(sec: dict, key: str, where: str, default=None) -> float:
    if key not in sec:
        if default is None:
            raise ConfigError(f"{where}{key}", "missing required key")
        return default
    val = sec[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{where}{key}", f"expected a number, got {val!r}")
    return float(val)


def _integer(sec: dict, key: str, where: str, default=None) -> int:
    if key not in sec:
        if default is None:
            raise ConfigError(f"{where}{key}", "missing required key")
        return default
    val = sec[key]
    if isinstance(val, bool) or not isinstance(val, int):
        raise ConfigError(f"{where}{key}", f"expected an integer, got {val!r}")
    return val


def load_document(path) -> dict:
    """Read and parse a scenario file, mapping JSON errors to ConfigError."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as err:
        raise ConfigError(str(path), f"cannot read config: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(str(path), f"malformed JSON: {err}") from err
    if not isinstance(doc, dict):
        raise ConfigError(str(path), "top level must be a JSON object")
    return doc


_TOP_KEYS = {
    "name",
    "description",
    "mu0",
    "market",
    "price",
    "demand",
    "planner",
    "grid",
    "training",
    "seeds",
    "compat",
}


def _parse_price(doc: dict) -> mkt.PriceModel:
    sec = _require(doc, "price")
    if not isinstance(sec, dict):
        raise ConfigError("price", "expected an object")
    kind = _require(sec, "kind", "price.")
    try:
        if kind == "marginal_capacity":
            _check_keys(sec, {"kind", "M", "p0", "p1", "r", "D"}, "price.")
            return mkt.MarginalCapacityPrice(
                M=_number(sec, "M", "price."),
                p0=_number(sec, "p0", "price."),
                p1=_number(sec, "p1", "price."),
                r=_number(sec, "r", "price."),
                D=_number(sec, "D", "price."),
            )
        if kind == "capacity":
            _check_keys(sec, {"kind", "p0", "p1", "r", "eps1", "eps2"}, "price.")
            return mkt.CapacityPrice(
                p0=_number(sec, "p0", "price."),
                p1=_number(sec, "p1", "price."),
                r=_number(sec, "r", "price."),
                eps1=_number(sec, "eps1", "price."),
                eps2=_number(sec, "eps2", "price."),
            )
        if kind == "constant":
            _check_keys(sec, {"kind", "M"}, "price.")
            return mkt.ConstantPrice(M=_number(sec, "M", "price."))
    except ValueError as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError("price", str(err)) from err
    raise ConfigError("price.kind", f"unknown price kind {kind!r}")


def _parse_market(doc: dict, price: mkt.PriceModel) -> mkt.MarketParams:
    sec = _require(doc, "market")
    if not isinstance(sec, dict):
        raise ConfigError("market", "expected an object")
    _check_keys(sec, {"delta", "sigma", "sigma0", "c_p", "c_i", "c_a"}, "market.")
    try:
        return mkt.MarketParams(
            delta=_number(sec, "delta", "market."),
            sigma=_number(sec, "sigma", "market.", default=0.0),
            sigma0=_number(sec, "sigma0", "market."),
            c_p=_number(sec, "c_p", "market."),
            c_i=_number(sec, "c_i", "market."),
            c_a=_number(sec, "c_a", "market."),
            price=price,
        )
    except ValueError as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError("market", str(err)) from err


def _parse_demand(doc: dict) -> mkt.DemandSpec:
    sec = _require(doc, "demand")
    if not isinstance(sec, dict):
        raise ConfigError("demand", "expected an object")
    kind = _require(sec, "kind", "demand.")
    try:
        if kind == "constant":
            _check_keys(sec, {"kind", "D"}, "demand.")
            return mkt.ConstantDemand(D=_number(sec, "D", "demand."))
        if kind == "mean_reverting":
            _check_keys(sec, {"kind", "a", "b0", "b1", "b2", "D0"}, "demand.")
            return mkt.MeanRevertingDemand(
                a=_number(sec, "a", "demand."),
                b0=_number(sec, "b0", "demand."),
                b1=_number(sec, "b1", "demand."),
                b2=_number(sec, "b2", "demand."),
                D0=_number(sec, "D0", "demand."),
            )
    except ValueError as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError("demand", str(err)) from err
    raise ConfigError("demand.kind", f"unknown demand kind {kind!r}")


def _parse_grid(doc: dict) -> Grid:
    sec = _require(doc, "grid")
    if not isinstance(sec, dict):
        raise ConfigError("grid", "expected an object")
    _check_keys(sec, {"T", "N"}, "grid.")
    try:
        return Grid(T=_number(sec, "T", "grid."), N=_integer(sec, "N", "grid."))
    except ValueError as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError("grid", str(err)) from err


def _parse_schedule(sec: dict, key: str, where: str, default) -> Schedule:
    if key not in sec:
        return Schedule(default)
    val = sec[key]
    try:
        return Schedule(val)
    except (ValueError, TypeError) as err:
        raise ConfigError(f"{where}{key}", f"bad learning-rate schedule: {err}") from err


def _parse_training(doc: dict, seed: int) -> TrainingConfig:
    sec = doc.get("training", {})
    if not isinstance(sec, dict):
        raise ConfigError("training", "expected an object")
    allowed = {
        "batch",
        "iterations",
        "optimizer",
        "lr_init",
        "lr_diff",
        "lr_value",
        "hidden",
        "eval_batch_factor",
        "warm_start",
        "full_init_net",
    }
    _check_keys(sec, allowed, "training.")
    hidden = sec.get("hidden", [32, 32])
    if not (isinstance(hidden, list) and all(isinstance(w, int) and w >= 1 for w in hidden)):
        raise ConfigError("training.hidden", f"expected a list of positive integers, got {hidden!r}")
    optimizer = sec.get("optimizer", "adam")
    compat = doc.get("compat", {})
    if not isinstance(compat, dict):
        raise ConfigError("compat", "expected an object")
    _check_keys(compat, {"paper_drift", "undivided_z"}, "compat.")
    try:
        return TrainingConfig(
            batch=_integer(sec, "batch", "training.", default=2000),
            iterations=_integer(sec, "iterations", "training.", default=1000),
            optimizer=optimizer,
            seed=seed,
            lr_init=_parse_schedule(sec, "lr_init", "training.", 1e-4),
            lr_diff=_parse_schedule(sec, "lr_diff", "training.", 1e-4),
            lr_value=_parse_schedule(sec, "lr_value", "training.", 1e-4),
            hidden=tuple(hidden),
            eval_batch_factor=_integer(sec, "eval_batch_factor", "training.", default=10),
            warm_start=bool(sec.get("warm_start", True)),
            full_init_net=bool(sec.get("full_init_net", False)),
            paper_drift=bool(compat.get("paper_drift", False)),
            undivided_z=bool(compat.get("undivided_z", False)),
        )
    except ValueError as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError("training", str(err)) from err


def _parse_seed(doc: dict, override: Optional[int]) -> int:
    if override is not None:
        return int(override)
    sec = doc.get("seeds", {})
    if not isinstance(sec, dict):
        raise ConfigError("seeds", "expected an object")
    _check_keys(sec, {"master"}, "seeds.")
    return _integer(sec, "master", "seeds.", default=0)


def build_mfg(doc: dict, seed_override: Optional[int] = None) -> tuple[MfgScenario, TrainingConfig]:
    """Validate a document and build the plain mean-field scenario."""
    _check_keys(doc, _TOP_KEYS, "")
    price = _parse_price(doc)
    market = _parse_market(doc, price)
    grid = _parse_grid(doc)
    mu0 = _number(doc, "mu0", "")
    seed = _parse_seed(doc, seed_override)
    cfg = _parse_training(doc, seed)
    return MfgScenario(market=market, grid=grid, mu0=mu0), cfg


def build_stackelberg(
    doc: dict, seed_override: Optional[int] = None
) -> tuple[StackelbergScenario, TrainingConfig]:
    """Validate a document and build the planner scenario."""
    _check_keys(doc, _TOP_KEYS, "")
    price = _parse_price(doc)
    market = _parse_market(doc, price)
    grid = _parse_grid(doc)
    mu0 = _number(doc, "mu0", "")
    demand = _parse_demand(doc)
    planner_sec = _require(doc, "planner")
    if not isinstance(planner_sec, dict):
        raise ConfigError("planner", "expected an object")
    _check_keys(planner_sec, {"lambda_d", "S"}, "planner.")
    try:
        planner = mkt.PlannerParams(
            lambda_d=_number(planner_sec, "lambda_d", "planner."),
            S=_number(planner_sec, "S", "planner."),
        )
    except ValueError as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError("planner", str(err)) from err
    seed = _parse_seed(doc, seed_override)
    cfg = _parse_training(doc, seed)
    scn = StackelbergScenario(market=market, grid=grid, mu0=mu0, demand=demand, planner=planner)
    return scn, cfg


def resolved_echo(doc: dict, cfg: TrainingConfig) -> dict:
    """Document echo with every default filled in; rerunning it reproduces the run."""
    out = json.loads(json.dumps(doc))  # deep copy, JSON-clean
    out["seeds"] = {"master": cfg.seed}
    out["training"] = {
        "batch": cfg.batch,
        "iterations": cfg.iterations,
        "optimizer": cfg.optimizer,
        "lr_init": cfg.lr_init.as_json(),
        "lr_diff": cfg.lr_diff.as_json(),
        "lr_value": cfg.lr_value.as_json(),
        "hidden": list(cfg.hidden),
        "eval_batch_factor": cfg.eval_batch_factor,
        "warm_start": cfg.warm_start,
        "full_init_net": cfg.full_init_net,
    }
    out["compat"] = {"paper_drift": cfg.paper_drift, "undivided_z": cfg.undivided_z}
    return out
