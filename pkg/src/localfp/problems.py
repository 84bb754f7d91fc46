"""Node-operator ensembles built from a :class:`~localfp.config.RunConfig`."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .dataio import (
    load_libsvm,
    logistic_cyclic_operators,
    logistic_gd_operators,
    partition,
    with_auto_kappa,
)
from .engine import Schedule
from .operators import Operator, OperatorProperties, make_affine_operator
from .theory import quadratic_cocoercivity

__all__ = ["Problem", "quadratic_ensemble", "random_quadratic_ensemble", "build_problem",
           "schedule_from_config"]


@dataclass
class Problem:
    ops: list[Operator]
    x0: np.ndarray
    info: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return len(self.ops)


def _per_node(values, M, d, name):
    out = []
    for v in values:
        arr = np.asarray(v, dtype=float)
        if arr.ndim == 0:
            arr = np.full(d, float(arr))
        if arr.shape != (d,):
            raise ValueError(f"{name}: entry has shape {arr.shape}, expected ({d},)")
        out.append(arr)
    if len(out) != M:
        raise ValueError(f"{name}: expected {M} entries")
    return out


def quadratic_ensemble(mu, centers, gamma: float | None = None) -> tuple[list[Operator], float]:
    """Gradient steps on ``F_i(x) = 1/2 sum_j mu_ij (x_j - c_ij)^2``.

    ``mu`` and ``centers`` hold one entry per node (scalar or length-d).
    ``gamma`` defaults to ``1/L`` with ``L`` the largest curvature. Each
    operator is affine and declares firm nonexpansiveness when
    ``gamma mu <= 1``, its exact contraction factor, and the cocoercivity
    margin of its curvature range. Returns the operators and ``gamma``.
    """
    d = max(np.atleast_1d(np.asarray(c, dtype=float)).shape[0] for c in centers)
    d = max(d, max(np.atleast_1d(np.asarray(m, dtype=float)).shape[0] for m in mu))
    mus = _per_node(mu, len(mu), d, "mu")
    cs = _per_node(centers, len(mu), d, "centers")
    if any(np.any(m <= 0) for m in mus):
        raise ValueError("curvatures must be positive")
    L = max(float(m.max()) for m in mus)
    gamma = 1.0 / L if gamma is None else float(gamma)
    ops = []
    for i, (m, c) in enumerate(zip(mus, cs)):
        gm = gamma * m
        chi = float(np.max(np.abs(1.0 - gm)))
        firm = bool(np.all(gm <= 1.0))
        rho = None
        if gamma <= 1.0 / m.max() * (1.0 + 1e-12):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                rho = quadratic_cocoercivity(float(m.min()), float(m.max()), gamma)
        props = OperatorProperties(chi=chi if chi < 1.0 else None, rho=rho,
                                   firmly_nonexpansive=firm)
        ops.append(make_affine_operator(np.diag(1.0 - gm), gm * c, props, name=f"Q{i}"))
    return ops, gamma


def random_quadratic_ensemble(M: int, d: int, curvature_range=(1.0, 4.0),
                              center_spread: float = 1.0, seed: int = 0,
                              gamma: float | None = None) -> tuple[list[Operator], float]:
    rng = np.random.default_rng(seed)
    lo, hi = curvature_range
    mu = [rng.uniform(lo, hi, size=d) for _ in range(M)]
    centers = [center_spread * rng.standard_normal(d) for _ in range(M)]
    return quadratic_ensemble(mu, centers, gamma)


def _x0(value, d):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(d, float(arr))
    if arr.shape != (d,):
        raise ValueError(f"run.x0 has length {arr.shape[0]}, problem dimension is {d}")
    return arr


def build_problem(cfg: RunConfig) -> Problem:
    v = cfg.values
    if v["problem.kind"] == "quadratic":
        M, d = v["problem.M"], v["problem.d"]
        if v["problem.mu"] is not None or v["problem.centers"] is not None:
            rng = np.random.default_rng(v["problem.seed"])
            lo, hi = v["problem.curvature_range"]
            mu = v["problem.mu"] or [rng.uniform(lo, hi, size=d) for _ in range(M)]
            centers = v["problem.centers"] or [
                v["problem.center_spread"] * rng.standard_normal(d) for _ in range(M)]
            ops, gamma = quadratic_ensemble(mu, centers, v["problem.gamma"])
        else:
            ops, gamma = random_quadratic_ensemble(M, d, tuple(v["problem.curvature_range"]),
                                                   v["problem.center_spread"],
                                                   v["problem.seed"], v["problem.gamma"])
        info = {"gamma": gamma}
    else:
        ds = load_libsvm(v["problem.dataset"], v["problem.dim"])
        if v["problem.kappa"] == "auto":
            ds = with_auto_kappa(ds)
            kappa = ds.kappa
        else:
            kappa = float(v["problem.kappa"])
        part = partition(ds, v["problem.M"], v["problem.partition"],
                         v["problem.partition_seed"], v["problem.equal_shards"])
        if v["problem.operator"] == "gd":
            ops, gamma = logistic_gd_operators(ds, part, kappa, ds.d)
            info = {"gamma": gamma}
        else:
            ops = logistic_cyclic_operators(ds, part, kappa, ds.d, v["problem.order"])
            info = {}
        info.update(n=ds.n, d=ds.d, kappa=kappa)
    x0 = _x0(v["run.x0"], ops[0].dim)
    return Problem(ops, x0, info)


def schedule_from_config(cfg: RunConfig) -> Schedule:
    v = cfg.values
    if v["algorithm.kind"] == "randomized":
        return Schedule.bernoulli(v["algorithm.p"], v["algorithm.seed"])
    if v["algorithm.times"] is not None:
        return Schedule.explicit(v["algorithm.times"])
    return Schedule.uniform(v["algorithm.H"])
