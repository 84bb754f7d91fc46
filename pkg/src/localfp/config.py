"""Run configuration: a TOML file with dotted key paths plus ``key=value`` overrides.

Grammar (every key optional unless noted)::

    problem.kind            "quadratic" | "logistic"            (required)
    problem.M               number of nodes
    problem.d               dimension (quadratic)
    problem.seed            RNG seed for random curvatures/centers
    problem.curvature_range [mu_min, L]
    problem.center_spread   std of the random node minimizers
    problem.mu              per-node curvature: scalar or list of length d
    problem.centers         per-node minimizer: scalar or list of length d
    problem.gamma           gradient stepsize (default 1/L)
    problem.dataset         LIBSVM file (logistic)
    problem.partition       "contiguous" | "shuffled"
    problem.partition_seed
    problem.equal_shards    drop n mod M trailing samples
    problem.kappa           "auto" (L/n) or a number
    problem.dim             pad the feature dimension
    problem.operator        "gd" | "cyclic"
    problem.order           "innermost" | "sequential" (cyclic only)
    algorithm.kind          "local" | "randomized"                (required)
    algorithm.H             uniform period
    algorithm.times         explicit communication times (overrides H)
    algorithm.p             communication probability
    algorithm.seed          coin seed
    run.lambda, run.iterations, run.x0, run.threads
    reference.tol, reference.max_iters
    output.dir, output.name
    check.theorems, check.seeds, check.tol, check.epsilon, check.rho
    sweep.param ("H" | "lambda" | "p"), sweep.values
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config", "apply_overrides"]


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, Any] = {
    "problem.kind": None,
    "problem.M": 2,
    "problem.d": 1,
    "problem.seed": 0,
    "problem.curvature_range": [1.0, 4.0],
    "problem.center_spread": 1.0,
    "problem.mu": None,
    "problem.centers": None,
    "problem.gamma": None,
    "problem.dataset": None,
    "problem.partition": "contiguous",
    "problem.partition_seed": 0,
    "problem.equal_shards": False,
    "problem.kappa": "auto",
    "problem.dim": None,
    "problem.operator": "gd",
    "problem.order": "innermost",
    "algorithm.kind": None,
    "algorithm.H": 1,
    "algorithm.times": None,
    "algorithm.p": 1.0,
    "algorithm.seed": 0,
    "run.lambda": 1.0,
    "run.iterations": 100,
    "run.x0": 0.0,
    "run.threads": 1,
    "reference.tol": 1e-12,
    "reference.max_iters": 1_000_000,
    "output.dir": "out",
    "output.name": "run",
    "check.theorems": [],
    "check.seeds": 200,
    "check.tol": 1e-8,
    "check.epsilon": None,
    "check.rho": None,
    "sweep.param": None,
    "sweep.values": [],
}


def _flatten(tree: dict, prefix: str = "") -> dict[str, Any]:
    flat = {}
    for key, val in tree.items():
        path = f"{prefix}{key}"
        if isinstance(val, dict):
            flat.update(_flatten(val, path + "."))
        else:
            flat[path] = val
    return flat


def _parse_value(text: str) -> Any:
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(flat: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    out = dict(flat)
    for item in overrides:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        out[key.strip()] = _parse_value(val.strip())
    return out


@dataclass
class RunConfig:
    values: dict[str, Any] = field(default_factory=dict)
    source: str | None = None

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def with_values(self, **changes) -> "RunConfig":
        vals = copy.deepcopy(self.values)
        for k, v in changes.items():
            vals[k.replace("__", ".")] = v
        return parse_config(vals, self.source)

    @property
    def lam(self) -> float:
        return self.values["run.lambda"]

    @property
    def out_dir(self) -> Path:
        return Path(self.values["output.dir"])

    @property
    def name(self) -> str:
        return self.values["output.name"]


def _require(cond: bool, key: str, msg: str):
    if not cond:
        raise ConfigError(f"{key}: {msg}")


def _number(vals, key, positive=False, integer=False, minimum=None):
    v = vals[key]
    ok = isinstance(v, (int, float)) and not isinstance(v, bool)
    _require(ok, key, f"expected a number, got {v!r}")
    if integer:
        _require(float(v).is_integer(), key, f"expected an integer, got {v!r}")
        vals[key] = int(v)
    if positive:
        _require(v > 0, key, f"must be positive, got {v!r}")
    if minimum is not None:
        _require(v >= minimum, key, f"must be >= {minimum}, got {v!r}")


def parse_config(flat: dict[str, Any], source: str | None = None) -> RunConfig:
    """Validate flat key/value pairs against the grammar above."""
    unknown = sorted(set(flat) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown configuration key")
    vals = dict(DEFAULTS)
    vals.update(flat)

    kind = vals["problem.kind"]
    _require(kind in ("quadratic", "logistic"), "problem.kind",
             f"must be 'quadratic' or 'logistic', got {kind!r}")
    _number(vals, "problem.M", integer=True, minimum=1)
    if kind == "quadratic":
        _number(vals, "problem.d", integer=True, minimum=1)
        lo_hi = vals["problem.curvature_range"]
        _require(isinstance(lo_hi, list) and len(lo_hi) == 2 and 0 < lo_hi[0] <= lo_hi[1],
                 "problem.curvature_range", "expected [mu, L] with 0 < mu <= L")
        if vals["problem.mu"] is not None:
            _require(len(vals["problem.mu"]) == vals["problem.M"], "problem.mu",
                     "needs one entry per node")
        if vals["problem.centers"] is not None:
            _require(len(vals["problem.centers"]) == vals["problem.M"], "problem.centers",
                     "needs one entry per node")
        if vals["problem.gamma"] is not None:
            _number(vals, "problem.gamma", positive=True)
    else:
        _require(isinstance(vals["problem.dataset"], str), "problem.dataset",
                 "logistic problems need a dataset path")
        _require(vals["problem.partition"] in ("contiguous", "shuffled"), "problem.partition",
                 "must be 'contiguous' or 'shuffled'")
        _require(vals["problem.kappa"] == "auto" or isinstance(vals["problem.kappa"],
                                                               (int, float)),
                 "problem.kappa", "must be 'auto' or a number")
        _require(vals["problem.operator"] in ("gd", "cyclic"), "problem.operator",
                 "must be 'gd' or 'cyclic'")
        _require(vals["problem.order"] in ("innermost", "sequential"), "problem.order",
                 "must be 'innermost' or 'sequential'")

    alg = vals["algorithm.kind"]
    _require(alg in ("local", "randomized"), "algorithm.kind",
             f"must be 'local' or 'randomized', got {alg!r}")
    if alg == "local":
        if vals["algorithm.times"] is None:
            _number(vals, "algorithm.H", integer=True, minimum=1)
        else:
            ts = vals["algorithm.times"]
            _require(isinstance(ts, list) and all(isinstance(t, int) for t in ts),
                     "algorithm.times", "expected a list of integers")
    else:
        _number(vals, "algorithm.p", positive=True)
        _require(vals["algorithm.p"] <= 1, "algorithm.p", "must lie in (0, 1]")
        _number(vals, "algorithm.seed", integer=True)
    _number(vals, "run.lambda", positive=True)
    _number(vals, "run.iterations", integer=True, minimum=0)
    _number(vals, "run.threads", integer=True, minimum=1)
    _number(vals, "reference.tol", positive=True)
    _number(vals, "check.seeds", integer=True, minimum=1)
    _require(isinstance(vals["check.theorems"], list), "check.theorems", "expected a list")
    known = {"thm1", "thm2", "thm4", "thm5", "thm6", "cor_sqrtMT"}
    for t in vals["check.theorems"]:
        _require(t in known, "check.theorems", f"unknown theorem id {t!r}")
    if vals["sweep.param"] is not None:
        _require(vals["sweep.param"] in ("H", "lambda", "p"), "sweep.param",
                 "must be 'H', 'lambda' or 'p'")
    return RunConfig(vals, source)


def load_config(path, overrides: list[str] | None = None) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            tree = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    flat = apply_overrides(_flatten(tree), overrides or [])
    cfg = parse_config(flat, str(path))
    ds = cfg.values["problem.dataset"]
    if ds is not None and not Path(ds).is_absolute():
        cfg.values["problem.dataset"] = str((path.parent / ds).resolve())
    return cfg
