"""Command-line entry point: ``run``, ``sweep``, ``check`` and ``solve-ref``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 theorem violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .engine import (
    NonConvergence,
    ReferencePoints,
    Trajectory,
    compute_references,
    run_local,
    run_randomized,
)
from .operators import NumericalFailure, contraction_factor, average
from .problems import Problem, build_problem, schedule_from_config
from . import theory

log = logging.getLogger("localfp")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VIOLATION = 0, 1, 2, 3


def _write_atomic(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _json(obj) -> str:
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        raise TypeError(type(o))
    return json.dumps(obj, indent=2, default=default, allow_nan=True) + "\n"


def _references(cfg: RunConfig, prob: Problem) -> ReferencePoints:
    v = cfg.values
    lam = H = None
    if v["algorithm.kind"] == "local" and v["algorithm.times"] is None:
        lam, H = cfg.lam, v["algorithm.H"]
    elif v["algorithm.kind"] == "randomized" and v["algorithm.p"] == 1.0:
        # every iteration communicates: a uniform schedule with H = 1
        lam, H = cfg.lam, 1
    return compute_references(prob.ops, lam, H, v["reference.tol"], v["reference.max_iters"],
                              prob.x0)


def _simulate(cfg: RunConfig, prob: Problem, refs: ReferencePoints,
              seed: int | None = None, threads: int | None = None) -> Trajectory:
    v = cfg.values
    threads = threads or v["run.threads"]
    if v["algorithm.kind"] == "randomized":
        s = v["algorithm.seed"] if seed is None else seed
        return run_randomized(prob.ops, v["algorithm.p"], cfg.lam, prob.x0, v["run.iterations"],
                              s, refs, threads)
    return run_local(prob.ops, schedule_from_config(cfg), cfg.lam, prob.x0,
                     v["run.iterations"], refs, threads)


def _rho(cfg: RunConfig, prob: Problem) -> float | None:
    if cfg.values["check.rho"] is not None:
        return float(cfg.values["check.rho"])
    return average(prob.ops).props.rho


def _bounds(cfg: RunConfig, prob: Problem, refs: ReferencePoints, traj: Trajectory) -> dict:
    """Applicable bound values for the run summary."""
    v = cfg.values
    out: dict = {}
    lam, T = cfg.lam, v["run.iterations"]
    d0 = float(np.sum((prob.x0 - refs.x_star) ** 2))
    props = average(prob.ops).props
    chi = contraction_factor(prob.ops)
    H = traj.meta.get("H")
    if v["algorithm.kind"] == "local":
        if chi is not None and H is not None:
            try:
                x = theory.xi(lam, chi)
                out["xi"] = x
                if lam == 1.0:
                    out["S"] = theory.neighborhood_bound(x, H, refs.mean_residual_norm)
            except ValueError as exc:
                out["xi"] = f"inapplicable: {exc}"
        if props.alpha is not None and H is not None:
            try:
                out["zeta"] = theory.zeta(H, props.alpha, lam)
            except ValueError as exc:
                out["zeta"] = f"inapplicable: {exc}"
        if props.firmly_nonexpansive and T >= 1:
            try:
                out["thm3_rhs"] = theory.thm3_rhs(T, lam, H, d0, refs.sigma2)
            except theory.Inapplicable as exc:
                out["thm3_rhs"] = f"inapplicable: {exc.reason}"
    else:
        rho = _rho(cfg, prob)
        if rho is not None:
            try:
                out["thm6_rhs"] = theory.thm6_rhs(T, lam, rho, v["algorithm.p"], d0, refs.sigma2)
            except theory.Inapplicable as exc:
                out["thm6_rhs"] = f"inapplicable: {exc.reason}"
    return out


def _last(a):
    x = float(a[-1])
    return None if math.isnan(x) else x


def cmd_run(cfg: RunConfig) -> int:
    prob = build_problem(cfg)
    refs = _references(cfg, prob)
    start = time.perf_counter()
    traj = _simulate(cfg, prob, refs)
    elapsed = time.perf_counter() - start
    out = cfg.out_dir
    _write_atomic(out / f"{cfg.name}.csv", traj.to_csv())
    summary = {
        "meta": traj.meta,
        "final": {
            "resid2": _last(traj.resid2),
            "dist2_xstar": _last(traj.dist2_xstar),
            "dist2_xdagger": _last(traj.dist2_xdagger),
            "V": _last(traj.V),
            "x_hat": traj.xhat[-1],
        },
        "sigma2": refs.sigma2,
        "references": refs.to_dict(),
        "bounds": _bounds(cfg, prob, refs, traj),
        "communications": int(traj.comm[1:].sum()),
        "wall_clock_seconds": elapsed,
    }
    _write_atomic(out / f"{cfg.name}.summary.json", _json(summary))
    print(f"wrote {out / (cfg.name + '.csv')}  final dist2_xstar={summary['final']['dist2_xstar']}")
    return EXIT_OK


SWEEP_KEYS = {"H": "algorithm.H", "lambda": "run.lambda", "p": "algorithm.p"}


def _grid_from(cfg: RunConfig, grid: str | None) -> tuple[str, list]:
    if grid:
        param, sep, vals = grid.partition("=")
        if not sep:
            raise ConfigError(f"--grid {grid!r}: expected PARAM=v1,v2,...")
        param = param.strip()
        try:
            values = [json.loads(x) for x in vals.split(",") if x.strip()]
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--grid: {exc}") from exc
    else:
        param, values = cfg.values["sweep.param"], list(cfg.values["sweep.values"])
    if param not in SWEEP_KEYS:
        raise ConfigError(f"sweep.param: must be one of {sorted(SWEEP_KEYS)}, got {param!r}")
    if not values:
        raise ConfigError("sweep.values: grid is empty")
    return param, values


def _plateau(col: np.ndarray) -> float | None:
    tail = col[-max(1, len(col) // 10):]
    m = float(np.mean(tail))
    return None if math.isnan(m) else m


def cmd_sweep(cfg: RunConfig, grid: str | None = None) -> int:
    param, values = _grid_from(cfg, grid)
    key = SWEEP_KEYS[param]
    points = [cfg.with_values(**{key.replace(".", "__"): val}) for val in values]

    def one(pc: RunConfig):
        prob = build_problem(pc)
        refs = _references(pc, prob)
        traj = _simulate(pc, prob, refs, threads=1)
        return traj

    workers = cfg.values["run.threads"]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trajs = list(pool.map(one, points))
    else:
        trajs = [one(pc) for pc in points]

    out = cfg.out_dir
    rows = ["param,value,csv,final_dist2_xstar,plateau_dist2_xstar,communications"]
    for val, traj in zip(values, trajs):
        fname = f"{cfg.name}_{param}={val}.csv"
        _write_atomic(out / fname, traj.to_csv())
        final = _last(traj.dist2_xstar)
        plateau = _plateau(traj.dist2_xstar)
        rows.append(f"{param},{val},{fname},{'' if final is None else repr(final)},"
                    f"{'' if plateau is None else repr(plateau)},{int(traj.comm[1:].sum())}")
    _write_atomic(out / f"{cfg.name}.index.csv", "\n".join(rows) + "\n")
    print(f"wrote {len(values)} trajectories and {out / (cfg.name + '.index.csv')}")
    return EXIT_OK


def cmd_check(cfg: RunConfig, trajectories: list[str] | None = None) -> int:
    theorems = cfg.values["check.theorems"]
    if not theorems:
        raise ConfigError("check.theorems: nothing to check")
    prob = build_problem(cfg)
    refs = _references(cfg, prob)
    tol = cfg.values["check.tol"]
    props = [o.props for o in prob.ops]
    chi = contraction_factor(prob.ops)
    traj = None
    if any(t != "thm6" for t in theorems):
        traj = _simulate(cfg, prob, refs)
        replay = traj.to_csv()
        for path in trajectories or []:
            if Path(path).read_text() != replay:
                raise ConfigError(f"{path}: trajectory does not match a replay of this config")

    reports = []
    for thm in theorems:
        if thm == "thm6":
            reports.append(_check_thm6(cfg, prob, refs))
        else:
            reports.append(theory.check_trajectory(traj, refs, props, thm, tol, chi=chi))

    status = EXIT_OK
    for rep in reports:
        _write_atomic(cfg.out_dir / f"{cfg.name}.{rep.theorem}.report.txt", rep.to_text())
        line = f"{rep.theorem}: {rep.verdict}"
        if rep.reason:
            line += f" ({rep.reason})"
        if rep.witness:
            line += f" [{rep.witness}]"
        print(line)
        if rep.violated:
            status = EXIT_VIOLATION
    return status


def _check_thm6(cfg: RunConfig, prob: Problem, refs: ReferencePoints) -> theory.TheoremReport:
    if cfg.values["algorithm.kind"] != "randomized":
        return theory.TheoremReport("thm6", "inapplicable",
                                    reason="applies to the randomized method only")
    rho = _rho(cfg, prob)
    if rho is None:
        return theory.TheoremReport("thm6", "inapplicable",
                                    reason="no cocoercivity margin declared (set check.rho)")
    base = cfg.values["algorithm.seed"]
    trajs = [_simulate(cfg, prob, refs, seed=base + s) for s in range(cfg.values["check.seeds"])]
    return theory.check_ensemble(trajs, refs, rho)


def cmd_solve_ref(cfg: RunConfig) -> int:
    prob = build_problem(cfg)
    refs = _references(cfg, prob)
    payload = refs.to_dict()
    payload["problem"] = prob.info
    _write_atomic(cfg.out_dir / f"{cfg.name}.refs.json", _json(payload))
    print(f"x_star residual {refs.residual_star:.3e}; sigma2 {refs.sigma2!r}")
    if refs.x_dagger is not None:
        print(f"x_dagger residual {refs.residual_dagger:.3e}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="localfp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="TOML configuration file")
        p.add_argument("--seed", type=int, help="override algorithm.seed")
        p.add_argument("--out-dir", help="override output.dir")
        p.add_argument("--threads", type=int, help="override run.threads")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any configuration key (repeatable)")
        return p

    common(sub.add_parser("run", help="run one experiment"))
    sw = common(sub.add_parser("sweep", help="run a parameter grid"))
    sw.add_argument("--grid", help="PARAM=v1,v2,... with PARAM in H, lambda, p")
    ck = common(sub.add_parser("check", help="check theorems against replayed runs"))
    ck.add_argument("trajectories", nargs="*", help="CSV files produced by run")
    common(sub.add_parser("solve-ref", help="solve for the reference fixed points"))
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"algorithm.seed={args.seed}")
    if args.out_dir is not None:
        overrides.append(f"output.dir={json.dumps(args.out_dir)}")
    if args.threads is not None:
        overrides.append(f"run.threads={args.threads}")
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.grid)
        if args.command == "check":
            return cmd_check(cfg, args.trajectories)
        return cmd_solve_ref(cfg)
    except (NumericalFailure, NonConvergence, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, OSError, ValueError) as exc:
        # remaining ValueErrors come from parameter validation in the builders
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
