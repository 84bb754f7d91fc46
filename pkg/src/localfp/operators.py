"""Operators on R^d: algebra, concrete families and empirical property checks.

An :class:`Operator` wraps an evaluable map together with the analytic
properties it is *declared* to have (averagedness, contraction factor,
cocoercivity margin). The combinators below propagate declared properties
according to the standard calculus of averaged and contractive maps, and
carry an exact affine representation along whenever every input has one, so
fixed points of affine families can be computed in closed form.

Declared properties are never checked on construction. Use
:func:`verify_property` to look for a counterexample.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "NumericalFailure",
    "OperatorProperties",
    "Operator",
    "PropertyReport",
    "Sampler",
    "apply",
    "relax",
    "power",
    "average",
    "residual",
    "identity",
    "make_gd_operator",
    "make_cyclic_gd_operator",
    "make_affine_operator",
    "affine_fixed_point",
    "contraction_factor",
    "verify_property",
    "empirical_rho",
    "pairwise_sum",
]

Array = np.ndarray
SLACK_REL = 1e-9


class DimensionError(ValueError):
    pass


class NumericalFailure(ArithmeticError):
    """A computation produced NaN or Inf."""


@dataclass(frozen=True)
class OperatorProperties:
    """Declared analytic properties of an operator.

    ``alpha`` is the averagedness parameter, ``chi`` a Lipschitz factor
    below one, ``rho`` the margin in
    ``(1+rho)|T x - T y|^2 <= |x-y|^2 - |(x-Tx) - (y-Ty)|^2``.
    ``firmly_nonexpansive`` implies ``alpha <= 1/2`` and fills it in when
    absent.
    """

    alpha: float | None = None
    chi: float | None = None
    rho: float | None = None
    firmly_nonexpansive: bool = False

    def __post_init__(self):
        if self.alpha is not None and not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.chi is not None and not 0.0 <= self.chi < 1.0:
            raise ValueError(f"chi must lie in [0, 1), got {self.chi}")
        if self.rho is not None and not self.rho > 0.0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if self.firmly_nonexpansive:
            if self.alpha is None:
                object.__setattr__(self, "alpha", 0.5)
            elif self.alpha > 0.5:
                raise ValueError("firmly nonexpansive operators are 1/2-averaged; "
                                 f"alpha={self.alpha} contradicts the flag")
        elif self.alpha is not None and self.alpha <= 0.5:
            object.__setattr__(self, "firmly_nonexpansive", True)

    @property
    def nonexpansive(self) -> bool:
        return self.alpha is not None or self.chi is not None


NO_PROPS = OperatorProperties()


class Operator:
    """A deterministic, dimension-preserving map on R^d.

    Instances are immutable; ``fn`` must be a pure function of its input so
    that the operator can be evaluated from several threads at once.
    """

    __slots__ = ("fn", "dim", "props", "name", "affine")

    def __init__(self, fn: Callable[[Array], Array], dim: int,
                 props: OperatorProperties | None = None, name: str = "T",
                 affine: tuple[Array, Array] | None = None):
        if dim < 1:
            raise DimensionError(f"dimension must be >= 1, got {dim}")
        object.__setattr__(self, "fn", fn)
        object.__setattr__(self, "dim", int(dim))
        object.__setattr__(self, "props", props or NO_PROPS)
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "affine", affine)

    def __setattr__(self, key, value):
        raise AttributeError("Operator is immutable")

    def __call__(self, x) -> Array:
        return apply(self, x)

    def __repr__(self):
        return f"Operator({self.name!r}, dim={self.dim}, props={self.props})"

    def with_props(self, props: OperatorProperties) -> "Operator":
        return Operator(self.fn, self.dim, props, self.name, self.affine)


def _as_vector(x, dim: int) -> Array:
    v = np.asarray(x, dtype=float)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.shape != (dim,):
        raise DimensionError(f"expected a vector of length {dim}, got shape {v.shape}")
    return v


def apply(op: Operator, x) -> Array:
    """Evaluate ``op`` at ``x``, rejecting wrong shapes and non-finite output."""
    v = _as_vector(x, op.dim)
    y = np.asarray(op.fn(v), dtype=float)
    if y.shape != (op.dim,):
        raise DimensionError(f"operator {op.name!r} returned shape {y.shape}, "
                             f"expected ({op.dim},)")
    if not np.all(np.isfinite(y)):
        raise NumericalFailure(f"operator {op.name!r} produced a non-finite value")
    return y


def residual(op: Operator, x) -> Array:
    """Local residual ``x - op(x)``."""
    v = _as_vector(x, op.dim)
    return v - apply(op, v)


def pairwise_sum(terms: Sequence[Array]) -> Array:
    """Sum in a fixed binary tree over the input order.

    The association only depends on ``len(terms)``, so the result is the
    same bit pattern no matter who computed the individual terms.
    """
    n = len(terms)
    if n == 0:
        raise ValueError("empty sum")
    if n == 1:
        return np.array(terms[0], dtype=float, copy=True)
    mid = n // 2
    return pairwise_sum(terms[:mid]) + pairwise_sum(terms[mid:])


def identity(dim: int) -> Operator:
    return Operator(lambda x: x.copy(), dim, OperatorProperties(firmly_nonexpansive=True),
                    "Id", (np.eye(dim), np.zeros(dim)))


# --- combinators -----------------------------------------------------------

def _relaxed_chi(chi: float, lam: float) -> float | None:
    xi = max(lam * chi + (1.0 - lam), lam * (1.0 + chi) - 1.0)
    return xi if xi < 1.0 else None


def averaged_composition(alpha: float, times: int) -> float:
    """Averagedness of the ``times``-fold composition of an alpha-averaged map."""
    return times * alpha / (1.0 + (times - 1) * alpha)


def relax(op: Operator, lam: float) -> Operator:
    """The map ``x -> (1-lam) x + lam op(x)``."""
    if not lam > 0:
        raise ValueError(f"relaxation must be positive, got {lam}")
    if lam == 1.0:
        return op
    p = op.props
    alpha = p.alpha * lam if p.alpha is not None and p.alpha * lam < 1.0 else None
    if p.alpha is not None and p.alpha * lam == 1.0:
        alpha = 1.0
    chi = _relaxed_chi(p.chi, lam) if p.chi is not None else None
    props = OperatorProperties(alpha=alpha, chi=chi)
    fn = op.fn

    def relaxed(x):
        return (1.0 - lam) * x + lam * fn(x)

    affine = None
    if op.affine is not None:
        A, b = op.affine
        affine = ((1.0 - lam) * np.eye(op.dim) + lam * A, lam * b)
    return Operator(relaxed, op.dim, props, f"relax({op.name},{lam:g})", affine)


def power(op: Operator, H: int) -> Operator:
    """``op`` composed with itself ``H`` times."""
    if int(H) != H or H < 1:
        raise ValueError(f"power must be an integer >= 1, got {H}")
    H = int(H)
    if H == 1:
        return op
    p = op.props
    props = OperatorProperties(
        alpha=averaged_composition(p.alpha, H) if p.alpha is not None else None,
        chi=p.chi ** H if p.chi is not None else None,
    )
    fn = op.fn

    def composed(x):
        for _ in range(H):
            x = fn(x)
        return x

    affine = None
    if op.affine is not None:
        A, b = op.affine
        An, bn = A, b
        for _ in range(H - 1):
            An, bn = A @ An, A @ bn + b
        affine = (An, bn)
    return Operator(composed, op.dim, props, f"{op.name}^{H}", affine)


def average(ops: Sequence[Operator]) -> Operator:
    """Pointwise mean ``(1/M) sum_i T_i``, reduced by :func:`pairwise_sum`."""
    ops = list(ops)
    if not ops:
        raise ValueError("cannot average an empty list of operators")
    dim = ops[0].dim
    if any(o.dim != dim for o in ops):
        raise DimensionError("operators to average have different dimensions")
    if len(ops) == 1:
        return ops[0]
    M = len(ops)
    fns = [o.fn for o in ops]

    def averaged(x):
        return pairwise_sum([f(x) for f in fns]) / M

    props = [o.props for o in ops]
    alphas = [q.alpha for q in props]
    chis = [q.chi for q in props]
    rhos = [q.rho for q in props]
    combined = OperatorProperties(
        alpha=max(alphas) if None not in alphas else None,
        chi=max(chis) if None not in chis else None,
        rho=min(rhos) if None not in rhos else None,
        firmly_nonexpansive=all(q.firmly_nonexpansive for q in props),
    )
    affine = None
    if all(o.affine is not None for o in ops):
        affine = (pairwise_sum([o.affine[0] for o in ops]) / M,
                  pairwise_sum([o.affine[1] for o in ops]) / M)
    name = "avg(" + ",".join(o.name for o in ops) + ")" if M <= 4 else f"avg[{M}]"
    return Operator(averaged, dim, combined, name, affine)


# --- concrete families -----------------------------------------------------

def make_gd_operator(grad: Callable[[Array], Array], gamma: float, dim: int,
                     props: OperatorProperties | None = None, name: str = "GD") -> Operator:
    """Gradient step ``x -> x - gamma grad(x)``.

    The caller is responsible for declaring properties: ``gamma = 1/L`` on
    a convex L-smooth function gives a firmly nonexpansive map, and on a
    mu-strongly convex one with ``gamma <= 2/(L+mu)`` a contraction with
    factor ``1 - gamma mu``.
    """
    if not gamma > 0:
        raise ValueError(f"stepsize must be positive, got {gamma}")

    def step(x):
        return x - gamma * grad(x)

    return Operator(step, dim, props, name)


def make_cyclic_gd_operator(sample_grads: Sequence[Callable[[Array], Array]], L: float,
                            dim: int, order: str = "innermost",
                            props: OperatorProperties | None = None,
                            name: str = "cyclicGD") -> Operator:
    """One pass of per-sample gradient steps with stepsize ``1/(N L)``.

    With ``order="innermost"`` the map is ``S_1(S_2(...S_N(x)))``, so sample
    N is used first; ``order="sequential"`` uses sample 1 first.
    """
    grads = list(sample_grads)
    if not grads:
        raise ValueError("cyclic GD needs at least one sample gradient")
    if not L > 0:
        raise ValueError(f"smoothness constant must be positive, got {L}")
    if order == "innermost":
        grads = grads[::-1]
    elif order != "sequential":
        raise ValueError(f"unknown order {order!r}")
    step = 1.0 / (len(grads) * L)

    def sweep(x):
        for g in grads:
            x = x - step * g(x)
        return x

    return Operator(sweep, dim, props, name)


def make_affine_operator(A, b, props: OperatorProperties | None = None,
                         name: str = "affine") -> Operator:
    """``x -> A x + b``. A scalar ``A`` means ``A * I``.

    Without explicit ``props`` the spectral norm of ``A`` is declared as the
    contraction factor when it is below one.
    """
    b = np.atleast_1d(np.asarray(b, dtype=float))
    A = np.asarray(A, dtype=float)
    dim = b.shape[0]
    if A.ndim == 0:
        A = float(A) * np.eye(dim)
    elif A.ndim == 1 and dim == A.shape[0] == 1:
        A = A.reshape(1, 1)
    if A.shape != (dim, dim):
        raise DimensionError(f"slope has shape {A.shape}, offset has length {dim}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise NumericalFailure("affine operator with non-finite coefficients")
    A = A.copy()
    b = b.copy()
    A.flags.writeable = False
    b.flags.writeable = False
    if props is None:
        norm = float(np.linalg.norm(A, 2))
        props = OperatorProperties(chi=norm) if norm < 1.0 else NO_PROPS

    def affine_map(x):
        return A @ x + b

    return Operator(affine_map, dim, props, name, (A, b))


def affine_fixed_point(op: Operator) -> Array:
    """Closed-form fixed point ``(I - A)^{-1} b`` of an affine operator."""
    if op.affine is None:
        raise TypeError(f"operator {op.name!r} has no affine representation")
    A, b = op.affine
    K = np.eye(op.dim) - A
    if np.linalg.cond(K) > 1e13:
        raise np.linalg.LinAlgError(f"I - A is singular for {op.name!r}; "
                                    "no unique fixed point")
    return np.linalg.solve(K, b)


def contraction_factor(ops: Sequence[Operator]) -> float | None:
    """Common Lipschitz factor of a list of operators.

    Exact spectral norms are used for affine operators, declared ``chi``
    otherwise. Returns ``None`` when some operator has neither or the
    factor is not below one.
    """
    factors = []
    for o in ops:
        if o.affine is not None:
            factors.append(float(np.linalg.norm(o.affine[0], 2)))
        elif o.props.chi is not None:
            factors.append(o.props.chi)
        else:
            return None
    chi = max(factors)
    return chi if chi < 1.0 else None


# --- empirical property checks ---------------------------------------------

@dataclass(frozen=True)
class Sampler:
    num_pairs: int = 1000
    radius: float = 10.0
    seed: int = 0
    center: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.num_pairs < 1:
            raise ValueError("num_pairs must be >= 1")
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    def pairs(self, dim: int) -> tuple[Array, Array]:
        rng = np.random.default_rng(self.seed)

        def ball(n):
            g = rng.standard_normal((n, dim))
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            r = self.radius * rng.random(n) ** (1.0 / dim)
            return g * r[:, None]

        X, Y = ball(self.num_pairs), ball(self.num_pairs)
        if self.center is not None:
            c = np.asarray(self.center, dtype=float)
            X, Y = X + c, Y + c
        return X, Y


@dataclass
class PropertyReport:
    """Outcome of a sampled property check.

    ``passed`` is evidence only; a failure is a genuine disproof, with the
    offending pair in ``witness``.
    """

    property: str
    passed: bool
    worst_slack: float
    num_pairs: int
    witness: tuple[Array, Array] | None = None


def _slacks(op: Operator, prop: str, X: Array, Y: Array, chi, rho) -> tuple[Array, Array]:
    slack = np.empty(len(X))
    scale = np.empty(len(X))
    for n, (x, y) in enumerate(zip(X, Y)):
        tx, ty = apply(op, x), apply(op, y)
        dxy = float(np.dot(x - y, x - y))
        dt = float(np.dot(tx - ty, tx - ty))
        r = (x - tx) - (y - ty)
        dr = float(np.dot(r, r))
        if prop == "nonexpansive":
            s = dxy - dt
        elif prop == "contractive":
            s = chi * chi * dxy - dt
        elif prop == "firmly_nonexpansive":
            s = dxy - dt - dr
        else:
            s = dxy - dr - (1.0 + rho) * dt
        slack[n] = s
        scale[n] = 1.0 + dxy
    return slack, scale


def verify_property(op: Operator, prop: str, *, chi: float | None = None,
                    rho: float | None = None, sampler: Sampler | None = None) -> PropertyReport:
    """Search sampled point pairs for a violation of ``prop``.

    ``prop`` is one of ``"nonexpansive"``, ``"contractive"`` (needs ``chi``),
    ``"firmly_nonexpansive"`` or ``"cocoercive"`` (needs ``rho``). Each
    inequality is checked in squared form with slack ``1e-9 (1 + |x-y|^2)``.
    """
    if prop == "contractive" and chi is None:
        raise ValueError("contractive check needs chi")
    if prop == "cocoercive" and rho is None:
        raise ValueError("cocoercive check needs rho")
    if prop not in ("nonexpansive", "contractive", "firmly_nonexpansive", "cocoercive"):
        raise ValueError(f"unknown property {prop!r}")
    sampler = sampler or Sampler()
    X, Y = sampler.pairs(op.dim)
    slack, scale = _slacks(op, prop, X, Y, chi, rho)
    normalized = slack / scale
    worst = int(np.argmin(normalized))
    passed = bool(np.all(slack >= -SLACK_REL * scale))
    witness = None if passed else (X[worst], Y[worst])
    label = prop
    if chi is not None and prop == "contractive":
        label = f"contractive({chi:g})"
    elif prop == "cocoercive":
        label = f"cocoercive({rho:g})"
    return PropertyReport(label, passed, float(slack[worst]), sampler.num_pairs, witness)


def empirical_rho(op: Operator, sampler: Sampler | None = None) -> float:
    """Largest rho consistent with every sampled pair (an upper estimate).

    Sampling can only over-estimate the true margin, so the value is
    reported as empirical and never substituted for an analytic one.
    """
    sampler = sampler or Sampler()
    X, Y = sampler.pairs(op.dim)
    best = np.inf
    for x, y in zip(X, Y):
        tx, ty = apply(op, x), apply(op, y)
        dt = float(np.dot(tx - ty, tx - ty))
        if dt == 0.0:
            continue
        r = (x - tx) - (y - ty)
        best = min(best, (float(np.dot(x - y, x - y)) - float(np.dot(r, r))) / dt - 1.0)
    return float(best)


def replace_props(op: Operator, **changes) -> Operator:
    return op.with_props(dataclasses.replace(op.props, **changes))
