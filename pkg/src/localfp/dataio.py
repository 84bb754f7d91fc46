"""LIBSVM parsing, node partitioning and regularized logistic regression."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .engine import NonConvergence
from .operators import (
    Operator,
    OperatorProperties,
    make_cyclic_gd_operator,
    make_gd_operator,
)

__all__ = [
    "ParseError",
    "Sample",
    "Dataset",
    "Partition",
    "parse_libsvm",
    "load_libsvm",
    "to_libsvm",
    "partition",
    "smoothness_constant",
    "LogisticObjective",
    "logistic_value_grad",
    "logistic_gd_operators",
    "logistic_cyclic_operators",
]


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    label: int
    indices: tuple[int, ...]
    values: tuple[float, ...]


@dataclass(frozen=True)
class Dataset:
    samples: tuple[Sample, ...]
    d: int
    L_loss: float | None = None
    kappa: float | None = None

    @property
    def n(self) -> int:
        return len(self.samples)

    def matrix(self, dim: int | None = None, rows: Sequence[int] | None = None) -> sp.csr_matrix:
        """Feature rows as a CSR matrix with ``dim`` columns (default ``d``)."""
        dim = self.d if dim is None else dim
        if dim < self.d:
            raise ValueError(f"dimension {dim} is below the largest feature index {self.d}")
        picked = self.samples if rows is None else [self.samples[i] for i in rows]
        indptr = [0]
        cols, vals = [], []
        for s in picked:
            cols.extend(i - 1 for i in s.indices)
            vals.extend(s.values)
            indptr.append(len(cols))
        return sp.csr_matrix((np.array(vals, dtype=float), np.array(cols, dtype=np.int64),
                              np.array(indptr, dtype=np.int64)), shape=(len(picked), dim))

    def labels(self, rows: Sequence[int] | None = None) -> np.ndarray:
        picked = self.samples if rows is None else [self.samples[i] for i in rows]
        return np.array([s.label for s in picked], dtype=float)


@dataclass(frozen=True)
class Partition:
    shards: tuple[np.ndarray, ...]
    strategy: str

    @property
    def M(self) -> int:
        return len(self.shards)


def _parse_label(tok: str, lineno: int) -> int:
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"line {lineno}: bad label {tok!r}") from None
    if v == 1.0:
        return 1
    if v == -1.0:
        return -1
    raise ParseError(f"line {lineno}: label {tok!r} is not +1 or -1")


def parse_libsvm(source: str | Iterable[str]) -> Dataset:
    """Parse LIBSVM text: ``label idx:val idx:val ...`` per line, 1-based indices."""
    lines = io.StringIO(source) if isinstance(source, str) else source
    samples = []
    d = 0
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        label = _parse_label(tokens[0], lineno)
        idx, vals = [], []
        for tok in tokens[1:]:
            i, sep, v = tok.partition(":")
            try:
                if not sep:
                    raise ValueError
                i, v = int(i), float(v)
            except ValueError:
                raise ParseError(f"line {lineno}: malformed token {tok!r}") from None
            if i < 1:
                raise ParseError(f"line {lineno}: feature index {i} must be >= 1")
            if idx and i <= idx[-1]:
                raise ParseError(f"line {lineno}: feature indices not strictly increasing")
            if not math.isfinite(v):
                raise ParseError(f"line {lineno}: non-finite value {tok!r}")
            idx.append(i)
            vals.append(v)
        if idx:
            d = max(d, idx[-1])
        samples.append(Sample(label, tuple(idx), tuple(vals)))
    if not samples:
        raise ParseError("no samples found")
    return Dataset(tuple(samples), d)


def load_libsvm(path, dim: int | None = None) -> Dataset:
    with open(path) as fh:
        ds = parse_libsvm(fh)
    if dim is not None:
        if dim < ds.d:
            raise ValueError(f"requested dimension {dim} is below the largest index {ds.d}")
        ds = replace(ds, d=dim)
    return ds


def to_libsvm(ds: Dataset) -> str:
    out = []
    for s in ds.samples:
        feats = " ".join(f"{i}:{v!r}" for i, v in zip(s.indices, s.values))
        out.append(f"{'+1' if s.label > 0 else '-1'} {feats}".rstrip())
    return "\n".join(out) + "\n"


def partition(ds: Dataset, M: int, strategy: str = "contiguous", seed: int = 0,
              equal: bool = False) -> Partition:
    """Split sample indices into ``M`` blocks whose sizes differ by at most one.

    ``strategy="shuffled"`` permutes the indices with ``seed`` first.
    ``equal=True`` drops the trailing ``n mod M`` samples so every shard has
    the same size.
    """
    n = ds.n
    if int(M) != M or not 1 <= M <= n:
        raise ValueError(f"M must be an integer in [1, {n}], got {M}")
    if strategy == "contiguous":
        order = np.arange(n)
    elif strategy == "shuffled":
        order = np.random.default_rng(seed).permutation(n)
    else:
        raise ValueError(f"unknown partition strategy {strategy!r}")
    if equal:
        order = order[: n - n % M]
    shards = tuple(np.array(s) for s in np.array_split(order, M))
    return Partition(shards, strategy)


def _top_eigenvalue(A: sp.spmatrix, tol: float, max_iters: int) -> float:
    """Largest eigenvalue of ``A^T A`` by power iteration."""
    if A.nnz == 0:
        return 0.0
    v = np.random.default_rng(0).random(A.shape[1]) + 0.5
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iters):
        Av = A @ v
        w = A.T @ Av
        new = float(Av @ Av)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(new - est) <= tol * new:
            return new
        est = new
    raise NonConvergence(f"power iteration did not reach relative tol {tol:g} "
                         f"in {max_iters} iterations", abs(new - est))


def smoothness_constant(ds: Dataset, rows: Sequence[int] | None = None, tol: float = 1e-8,
                        max_iters: int = 10_000) -> float:
    """``lambda_max(A^T A) / (4 n)``: gradient Lipschitz constant of the mean logistic loss."""
    A = ds.matrix(rows=rows)
    n = A.shape[0]
    if n < 1:
        raise ValueError("empty dataset")
    return _top_eigenvalue(A, tol, max_iters) / (4.0 * n)


def with_auto_kappa(ds: Dataset) -> Dataset:
    """Set ``L_loss`` and ``kappa = L_loss / n``."""
    L = smoothness_constant(ds)
    return replace(ds, L_loss=L, kappa=L / ds.n)


class LogisticObjective:
    """``(1/n) sum log(1 + exp(-b_i a_i.x)) + (kappa/2)|x|^2`` over selected rows."""

    def __init__(self, ds: Dataset, kappa: float, rows: Sequence[int] | None = None,
                 dim: int | None = None):
        self.A = ds.matrix(dim, rows)
        self.AT = self.A.T.tocsr()
        self.b = ds.labels(rows)
        self.kappa = float(kappa)
        self.n = self.A.shape[0]
        self.dim = self.A.shape[1]
        if self.n < 1:
            raise ValueError("objective over zero samples")

    def value_grad(self, x) -> tuple[float, np.ndarray]:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"x has shape {x.shape}, expected ({self.dim},)")
        z = self.b * (self.A @ x)
        value = float(np.mean(np.logaddexp(0.0, -z))) + 0.5 * self.kappa * float(x @ x)
        grad = -(self.AT @ (self.b * expit(-z))) / self.n + self.kappa * x
        return value, grad

    def grad(self, x) -> np.ndarray:
        z = self.b * (self.A @ x)
        return -(self.AT @ (self.b * expit(-z))) / self.n + self.kappa * x

    def sample_grads(self) -> list:
        """Per-sample gradients of ``log(1+exp(-b a.x)) + (kappa/2)|x|^2``."""
        rows = [(self.A.getrow(j), self.b[j]) for j in range(self.n)]
        kappa = self.kappa

        def make(a, bj):
            idx, vals = a.indices, a.data

            def g(x):
                m = bj * float(vals @ x[idx])
                out = kappa * x
                out[idx] -= bj * expit(-m) * vals
                return out
            return g

        return [make(a, bj) for a, bj in rows]


def logistic_value_grad(ds: Dataset, kappa: float, x, rows: Sequence[int] | None = None):
    """Value and gradient of the regularized logistic loss at ``x``."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] < ds.d:
        raise ValueError(f"x must be a vector of length >= {ds.d}")
    return LogisticObjective(ds, kappa, rows, dim=x.shape[0]).value_grad(x)


def logistic_gd_operators(ds: Dataset, part: Partition, kappa: float,
                          dim: int | None = None) -> tuple[list[Operator], float]:
    """One gradient-step operator per shard with the common stepsize ``1/(L + kappa)``.

    ``L`` is the largest shard smoothness constant, so every operator is a
    step of length ``1/L_i`` or shorter on a convex function and is declared
    firmly nonexpansive. Returns the operators and the stepsize.
    """
    L = max(smoothness_constant(ds, rows=s) for s in part.shards)
    gamma = 1.0 / (L + kappa)
    ops = []
    for i, s in enumerate(part.shards):
        obj = LogisticObjective(ds, kappa, s, dim)
        ops.append(make_gd_operator(obj.grad, gamma, obj.dim,
                                    OperatorProperties(firmly_nonexpansive=True),
                                    name=f"GD{i}"))
    return ops, gamma


def logistic_cyclic_operators(ds: Dataset, part: Partition, kappa: float,
                              dim: int | None = None, order: str = "innermost") -> list[Operator]:
    """Cyclic per-sample gradient passes; no properties are declared."""
    L = max(smoothness_constant(ds, rows=s) for s in part.shards) + kappa
    ops = []
    for i, s in enumerate(part.shards):
        obj = LogisticObjective(ds, kappa, s, dim)
        ops.append(make_cyclic_gd_operator(obj.sample_grads(), L, obj.dim, order,
                                           name=f"cyclicGD{i}"))
    return ops
