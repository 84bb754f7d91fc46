"""Simulation of the local-steps and randomized-communication methods.

Both runners share one loop: every node applies its relaxed operator, and on
a communication step the master forms the mean of the node vectors (fixed
pairwise reduction order) and broadcasts it. The mean point is recorded at
every iteration, even between communications, together with the deviation
of the nodes from it.
"""

from __future__ import annotations

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .operators import (
    DimensionError,
    NumericalFailure,
    Operator,
    affine_fixed_point,
    apply,
    average,
    pairwise_sum,
    power,
    relax,
)

__all__ = [
    "NonConvergence",
    "Schedule",
    "Trajectory",
    "ReferencePoints",
    "run_local",
    "run_randomized",
    "epoch_operator",
    "solve_fixed_point",
    "compute_references",
    "CSV_HEADER",
]

CSV_HEADER = ("k", "comm", "resid2", "dist2_xstar", "dist2_xdagger", "V", "psi")


class NonConvergence(RuntimeError):
    def __init__(self, message: str, residual: float, x=None):
        super().__init__(message)
        self.residual = residual
        self.x = x


@dataclass(frozen=True)
class Schedule:
    """When the nodes communicate.

    Build with :meth:`uniform`, :meth:`explicit` or :meth:`bernoulli`.
    ``times`` always starts at 0 for explicit schedules.
    """

    kind: str
    H: int | None = None
    times: tuple[int, ...] = ()
    p: float | None = None
    seed: int | None = None

    @classmethod
    def uniform(cls, H: int) -> "Schedule":
        if int(H) != H or H < 1:
            raise ValueError(f"period H must be an integer >= 1, got {H}")
        return cls("uniform", H=int(H))

    @classmethod
    def explicit(cls, times: Sequence[int], H: int | None = None) -> "Schedule":
        ts = [int(t) for t in times]
        if not ts or ts[0] != 0:
            ts = [0] + ts
        gaps = np.diff(ts)
        if len(gaps) == 0:
            raise ValueError("explicit schedule needs at least one communication time")
        if np.any(gaps < 1):
            raise ValueError("communication times must be strictly increasing")
        max_gap = int(gaps.max())
        if H is None:
            H = max_gap
        elif max_gap > H:
            raise ValueError(f"epoch of length {max_gap} exceeds the declared bound H={H}")
        return cls("explicit", H=int(H), times=tuple(ts))

    @classmethod
    def bernoulli(cls, p: float, seed: int = 0) -> "Schedule":
        if not 0.0 < p <= 1.0:
            raise ValueError(f"communication probability must lie in (0, 1], got {p}")
        return cls("bernoulli", p=float(p), seed=int(seed))

    @property
    def is_uniform(self) -> bool:
        return self.kind == "uniform" or (
            self.kind == "explicit" and all(t == n * self.H for n, t in enumerate(self.times)))

    def describe(self) -> str:
        if self.kind == "uniform":
            return f"uniform(H={self.H})"
        if self.kind == "explicit":
            return f"explicit(H={self.H}, times={list(self.times)})"
        return f"bernoulli(p={self.p}, seed={self.seed})"


@dataclass
class ReferencePoints:
    """Fixed points the theorems are stated against, with achieved residuals."""

    x_star: np.ndarray
    x_dagger: np.ndarray | None = None
    tol: float = 1e-12
    residual_star: float = 0.0
    residual_dagger: float | None = None
    sigma2: float | None = None
    mean_residual_norm: float | None = None
    method: str = "iteration"

    def to_dict(self) -> dict:
        return {
            "x_star": self.x_star.tolist(),
            "x_dagger": None if self.x_dagger is None else self.x_dagger.tolist(),
            "tol": self.tol,
            "residual_star": self.residual_star,
            "residual_dagger": self.residual_dagger,
            "sigma2": self.sigma2,
            "mean_residual_norm": self.mean_residual_norm,
            "method": self.method,
        }


@dataclass
class Trajectory:
    k: np.ndarray
    comm: np.ndarray
    xhat: np.ndarray
    resid2: np.ndarray
    V: np.ndarray
    dist2_xstar: np.ndarray
    dist2_xdagger: np.ndarray
    psi: np.ndarray
    meta: dict = field(default_factory=dict)
    final_states: np.ndarray | None = None

    def __len__(self):
        return len(self.k)

    def epoch_points(self) -> np.ndarray:
        """Mean points at multiples of the uniform period ``H``."""
        H = self.meta["H"]
        return self.xhat[::H]

    def to_csv(self, stream=None) -> str:
        """Serialize to the fixed CSV schema; NaN cells are written empty.

        Floats use ``repr`` (shortest round-trip form), so identical runs give
        byte-identical files.
        """
        buf = io.StringIO()
        buf.write(",".join(CSV_HEADER) + "\n")
        cols = (self.resid2, self.dist2_xstar, self.dist2_xdagger, self.V, self.psi)
        for j in range(len(self.k)):
            cells = [str(int(self.k[j])), "1" if self.comm[j] else "0"]
            for c in cols:
                v = float(c[j])
                cells.append("" if math.isnan(v) else repr(v))
            buf.write(",".join(cells) + "\n")
        text = buf.getvalue()
        if stream is not None:
            stream.write(text)
        return text


def read_trajectory_csv(path) -> dict[str, np.ndarray]:
    """Load a trajectory CSV back into columns (empty cells become NaN)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if tuple(header) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    out = {}
    for j, name in enumerate(CSV_HEADER):
        vals = [float(r[j]) if r[j] != "" else math.nan for r in rows]
        out[name] = np.array(vals)
    out["k"] = out["k"].astype(int)
    out["comm"] = out["comm"].astype(bool)
    return out


def _check_ops(ops: Sequence[Operator], x0) -> tuple[list[Operator], np.ndarray]:
    ops = list(ops)
    if not ops:
        raise ValueError("need at least one node operator")
    dim = ops[0].dim
    if any(o.dim != dim for o in ops):
        raise DimensionError("node operators have different dimensions")
    x = np.asarray(x0, dtype=float).reshape(-1)
    if x.shape != (dim,):
        raise DimensionError(f"x0 has length {x.shape[0]}, operators act on R^{dim}")
    return ops, x


def _simulate(ops: list[Operator], lam: float, x0: np.ndarray, total_iters: int,
              communicate: Callable[[int], bool], refs: ReferencePoints | None,
              psi_p: float | None, meta: dict, threads: int) -> Trajectory:
    M, d = len(ops), ops[0].dim
    fns = [o.fn for o in ops]
    mean_op = average(ops).fn
    n = total_iters + 1
    xhat = np.empty((n, d))
    comm = np.zeros(n, dtype=bool)
    resid2 = np.empty(n)
    V = np.empty(n)
    nan = np.full(n, np.nan)
    d_star, d_dag, psi = nan.copy(), nan.copy(), nan.copy()
    x_star = refs.x_star if refs is not None else None
    x_dag = refs.x_dagger if refs is not None else None

    states = [x0.copy() for _ in range(M)]
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None

    def step(i):
        x = states[i]
        return (1.0 - lam) * x + lam * fns[i](x)

    def record(k, mean):
        xhat[k] = mean
        r = mean - mean_op(mean)
        resid2[k] = r @ r
        dev = [s - mean for s in states]
        V[k] = float(pairwise_sum([np.array(u @ u) for u in dev])) / M
        if x_star is not None:
            e = mean - x_star
            d_star[k] = e @ e
            if psi_p is not None:
                psi[k] = d_star[k] + 5.0 * lam / psi_p * V[k]
        if x_dag is not None:
            e = mean - x_dag
            d_dag[k] = e @ e

    comm[0] = True
    record(0, x0.copy())
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(total_iters):
                h = list(pool.map(step, range(M))) if pool else [step(i) for i in range(M)]
                if communicate(k + 1):
                    mean = pairwise_sum(h) / M
                    states = [mean.copy() for _ in range(M)]
                    comm[k + 1] = True
                else:
                    states = h
                    mean = pairwise_sum(h) / M
                if not np.all(np.isfinite(mean)):
                    raise NumericalFailure(f"non-finite iterate at k={k + 1}")
                record(k + 1, mean)
    finally:
        if pool:
            pool.shutdown()

    meta = dict(meta, lam=lam, M=M, d=d, total_iters=total_iters)
    return Trajectory(np.arange(n), comm, xhat, resid2, V, d_star, d_dag, psi, meta,
                      np.array(states))


def run_local(ops: Sequence[Operator], schedule: Schedule, lam: float, x0,
              total_iters: int, refs: ReferencePoints | None = None,
              threads: int = 1) -> Trajectory:
    """Local fixed-point method with deterministic communication times.

    The Lyapunov column is filled (when ``refs`` is given) with the
    effective probability ``1/H``, which is how the two methods line up.
    """
    if not lam > 0:
        raise ValueError(f"relaxation must be positive, got {lam}")
    if schedule.kind == "bernoulli":
        raise ValueError("run_local needs a deterministic schedule; use run_randomized")
    if total_iters < 0:
        raise ValueError("total_iters must be >= 0")
    ops, x = _check_ops(ops, x0)
    if schedule.kind == "uniform":
        H = schedule.H

        def communicate(k):
            return k % H == 0
    else:
        times = set(schedule.times)
        last = schedule.times[-1]
        if total_iters - last > schedule.H:
            raise ValueError(f"schedule ends at t={last} but the run has {total_iters} "
                             f"iterations; the trailing epoch would exceed H={schedule.H}")

        def communicate(k):
            return k in times

    meta = {"algorithm": "local", "schedule": schedule.describe(), "schedule_kind": schedule.kind,
            "uniform": schedule.is_uniform, "H": schedule.H, "p": None, "seed": None}
    return _simulate(ops, lam, x, total_iters, communicate, refs, 1.0 / schedule.H, meta,
                     threads)


def run_randomized(ops: Sequence[Operator], p: float, lam: float, x0, total_iters: int,
                   seed: int = 0, refs: ReferencePoints | None = None,
                   threads: int = 1) -> Trajectory:
    """Randomized fixed-point method: communicate with probability ``p``.

    One uniform draw per iteration from a Philox generator keyed by
    ``seed``; communication happens iff the draw is below ``p``.
    """
    if not 0.0 < p <= 1.0:
        raise ValueError(f"communication probability must lie in (0, 1], got {p}")
    if not lam > 0:
        raise ValueError(f"relaxation must be positive, got {lam}")
    ops, x = _check_ops(ops, x0)
    coins = np.random.Generator(np.random.Philox(seed)).random(total_iters)

    def communicate(k):
        return coins[k - 1] < p

    meta = {"algorithm": "randomized", "schedule": Schedule.bernoulli(p, seed).describe(),
            "schedule_kind": "bernoulli", "uniform": False, "H": None, "p": p, "seed": seed}
    return _simulate(ops, lam, x, total_iters, communicate, refs, p, meta, threads)


def epoch_operator(ops: Sequence[Operator], lam: float, H: int) -> Operator:
    """Mean of the ``H``-fold relaxed node operators (one uniform epoch)."""
    return average([power(relax(o, lam), H) for o in ops])


def solve_fixed_point(op: Operator, x0=None, tol: float = 1e-12,
                      max_iters: int = 1_000_000) -> np.ndarray:
    """Banach-Picard iteration ``x <- op(x)`` until ``|x - op(x)| <= tol``."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    x = np.zeros(op.dim) if x0 is None else np.asarray(x0, dtype=float).reshape(op.dim)
    res = math.inf
    for _ in range(max_iters + 1):
        y = apply(op, x)
        res = float(np.linalg.norm(x - y))
        if res <= tol:
            return x
        x = y
    raise NonConvergence(f"fixed-point iteration on {op.name!r} did not reach tol={tol:g} "
                         f"in {max_iters} iterations (last residual {res:.3e})", res, x)


def compute_references(ops: Sequence[Operator], lam: float | None = None,
                       H: int | None = None, tol: float = 1e-12,
                       max_iters: int = 1_000_000, x0=None) -> ReferencePoints:
    """Solve for ``x*`` (and ``x†`` when ``lam`` and ``H`` are given).

    Affine families are solved in closed form; anything else by
    :func:`solve_fixed_point` to ``tol``. Also records sigma^2 and the mean
    local residual norm at ``x*``.
    """
    ops = list(ops)
    T = average(ops)
    closed = T.affine is not None
    if closed:
        x_star = affine_fixed_point(T)
    else:
        x_star = solve_fixed_point(T, x0, tol, max_iters)
    res_star = float(np.linalg.norm(x_star - apply(T, x_star)))
    x_dag = res_dag = None
    if lam is not None and H == 1:
        # the relaxed average has the same fixed point as the average
        x_dag, res_dag = x_star.copy(), res_star
    elif lam is not None and H is not None:
        E = epoch_operator(ops, lam, H)
        if E.affine is not None:
            x_dag = affine_fixed_point(E)
        else:
            x_dag = solve_fixed_point(E, x_star, tol, max_iters)
        res_dag = float(np.linalg.norm(x_dag - apply(E, x_dag)))
    local = [x_star - apply(o, x_star) for o in ops]
    sigma2 = float(np.mean([g @ g for g in local]))
    mean_norm = float(np.mean([np.linalg.norm(g) for g in local]))
    return ReferencePoints(x_star, x_dag, tol, res_star, res_dag, sigma2, mean_norm,
                           "closed-form" if closed else "iteration")
