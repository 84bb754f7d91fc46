"""Closed-form convergence bounds, node metrics and trajectory checkers.

Bound evaluators raise :class:`Inapplicable` when the hypotheses of the
result they encode do not hold, instead of evaluating the formula outside
its range. Checkers turn that into an ``inapplicable`` verdict.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .engine import ReferencePoints, Trajectory
from .operators import Operator, OperatorProperties, apply, pairwise_sum

__all__ = [
    "Inapplicable",
    "Metrics",
    "TheoremReport",
    "zeta",
    "xi",
    "neighborhood_bound",
    "sigma2",
    "deviation",
    "lyapunov",
    "thm3_rhs",
    "cor1_min_iters",
    "cor1_condition",
    "cor_sqrtMT_lambda",
    "cor_sqrtMT_rhs",
    "thm6_rhs",
    "cor2_lambda",
    "cor2_min_iters",
    "quadratic_cocoercivity",
    "check_trajectory",
    "check_ensemble",
    "jensen_gap",
    "young_gap",
    "moment_defect",
]

RHO_CAP = 1e6


class Inapplicable(ValueError):
    """The hypotheses of a bound are not met."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass
class Metrics:
    sigma2: float = 0.0
    V: float = 0.0
    residual2: float = 0.0
    psi: float = 0.0

    def __post_init__(self):
        for name in ("sigma2", "V", "residual2", "psi"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


# --- parameters --------------------------------------------------------------

def zeta(H: int, alpha: float, lam: float) -> float:
    """Averagedness ``H a l / (1 + (H-1) a l)`` of the uniform epoch operator."""
    if int(H) != H or H < 1:
        raise ValueError(f"H must be an integer >= 1, got {H}")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if not 0.0 < lam < 1.0 / alpha:
        raise ValueError(f"lambda must lie in (0, 1/alpha) = (0, {1.0 / alpha:g}), got {lam}")
    a = alpha * lam
    return H * a / (1.0 + (H - 1) * a)


def xi(lam: float, chi: float) -> float:
    """Contraction factor of ``lam T + (1-lam) Id`` for a chi-contractive T."""
    if not 0.0 <= chi < 1.0:
        raise ValueError(f"chi must lie in [0, 1), got {chi}")
    upper = 2.0 / (1.0 + chi)
    if not 0.0 < lam < upper:
        raise ValueError(f"lambda must lie in (0, 2/(1+chi)) = (0, {upper:g}), got {lam}")
    return max(lam * chi + (1.0 - lam), lam * chi + (lam - 1.0))


def neighborhood_bound(xi_value: float, H: int, mean_residual_norm: float) -> float:
    """Radius bounding ``|x_dagger - x_star|`` for ``lam = 1``.

    ``mean_residual_norm`` is ``(1/M) sum_i |T_i(x*) - x*|``.
    """
    if not 0.0 <= xi_value < 1.0:
        raise ValueError(f"xi must lie in [0, 1), got {xi_value}")
    if int(H) != H or H < 1:
        raise ValueError(f"H must be an integer >= 1, got {H}")
    if mean_residual_norm < 0:
        raise ValueError("mean residual norm must be nonnegative")
    if H == 1 or xi_value == 0.0 or mean_residual_norm == 0.0:
        return 0.0
    x = xi_value
    return x / (1.0 - x) * (1.0 - x ** (H - 1)) / (1.0 - x ** H) * mean_residual_norm


# --- metrics -----------------------------------------------------------------

def sigma2(ops: Sequence[Operator], x_star) -> float:
    """Mean squared local residual ``(1/M) sum |x* - T_i(x*)|^2``."""
    x = np.asarray(x_star, dtype=float)
    terms = []
    for o in ops:
        g = x - apply(o, x)
        terms.append(np.array(g @ g))
    return float(pairwise_sum(terms)) / len(terms)


def deviation(states) -> float:
    """Mean squared distance of node vectors (rows) to their mean."""
    S = np.atleast_2d(np.asarray(states, dtype=float))
    mean = pairwise_sum(list(S)) / len(S)
    D = S - mean
    return float(pairwise_sum([np.array(r @ r) for r in D])) / len(S)


def lyapunov(x_hat, states, x_star, lam: float, p: float) -> float:
    """``|x_hat - x*|^2 + (5 lam / p) V``."""
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    if not lam > 0:
        raise ValueError("lambda must be positive")
    e = np.asarray(x_hat, dtype=float) - np.asarray(x_star, dtype=float)
    return float(e @ e) + 5.0 * lam / p * deviation(states)


# --- local method, firmly nonexpansive operators -------------------------------

def thm3_rhs(T_iters: int, lam: float, H: int, dist0_sq: float, sigma2: float) -> float:
    """Bound on the running mean of ``|x_hat^k - T(x_hat^k)|^2`` over ``k < T``.

    ``3 d0 / (lam T) + 36 lam^2 (H-1)^2 sigma^2``, valid for
    ``lam <= 1 / (8 max(1, H-1))``.
    """
    if T_iters < 1:
        raise ValueError("T must be >= 1")
    limit = 1.0 / (8.0 * max(1, H - 1))
    if not 0.0 < lam <= limit:
        raise Inapplicable(f"lambda={lam:g} exceeds 1/(8 max(1,H-1)) = {limit:g} for H={H}")
    return 3.0 * dist0_sq / (lam * T_iters) + 36.0 * lam ** 2 * (H - 1) ** 2 * sigma2


def _cor1_rhs(epsilon, sigma, dist0_sq, root_factor):
    factor = 3.0 * sigma / math.sqrt(root_factor * epsilon)
    return 24.0 * dist0_sq / epsilon * max(2.0, factor)


def cor1_condition(T_iters: int, epsilon: float, sigma: float, dist0_sq: float, H: int,
                   root_factor: float = 2.0) -> bool:
    """Whether ``T/(H-1) >= (24 d0 / eps) max{2, 3 sigma / sqrt(c eps)}``.

    ``c = root_factor`` is 2 for the bound the derivation supports;
    ``c = 1`` gives the more conservative variant.
    """
    return T_iters / (H - 1) >= _cor1_rhs(epsilon, sigma, dist0_sq, root_factor)


def cor1_min_iters(epsilon: float, sigma: float, dist0_sq: float, H: int,
                   root_factor: float = 2.0) -> int:
    """Smallest ``T`` satisfying :func:`cor1_condition`."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if int(H) != H or H < 2:
        raise ValueError(f"this iteration count needs H >= 2, got {H}")
    if dist0_sq == 0.0:
        return 0
    T = max(0, math.ceil((H - 1) * _cor1_rhs(epsilon, sigma, dist0_sq, root_factor)))
    while not cor1_condition(T, epsilon, sigma, dist0_sq, H, root_factor):
        T += 1
    while T > 0 and cor1_condition(T - 1, epsilon, sigma, dist0_sq, H, root_factor):
        T -= 1
    return T


def cor_sqrtMT_lambda(T_iters: int, M: int) -> float:
    return math.sqrt(M) / (8.0 * math.sqrt(T_iters))


def cor_sqrtMT_rhs(T_iters: int, M: int, H: int, dist0_sq: float, sigma2: float) -> float:
    """``24 d0 / sqrt(M T) + 3 M (H-1)^2 sigma^2 / (8 T)`` under ``lam = sqrt(M/T)/8``."""
    if T_iters < 1 or M < 1:
        raise ValueError("T and M must be >= 1")
    if H > math.sqrt(T_iters / M):
        raise Inapplicable(f"H={H} exceeds sqrt(T/M) = {math.sqrt(T_iters / M):g}")
    return (24.0 * dist0_sq / math.sqrt(M * T_iters)
            + 3.0 * M * (H - 1) ** 2 * sigma2 / (8.0 * T_iters))


# --- randomized method ---------------------------------------------------------

def _thm6_rate(lam, rho, p):
    return min(lam * rho / (1.0 + rho), p / 5.0)


def thm6_rhs(k, lam: float, rho: float, p: float, psi0: float, sigma2: float):
    """Bound on the expected Lyapunov value after ``k`` iterations.

    ``k`` may be an array. Requires ``lam < p/15`` and ``rho > 0``.
    """
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    if not rho > 0:
        raise Inapplicable(f"cocoercivity margin rho must be positive, got {rho}")
    if not 0.0 < lam < p / 15.0:
        raise Inapplicable(f"lambda={lam:g} is not below p/15 = {p / 15.0:g}")
    m = _thm6_rate(lam, rho, p)
    k = np.asarray(k, dtype=float)
    out = (1.0 - m) ** k * psi0 + 150.0 / (m * p * p) * lam ** 3 * sigma2
    return float(out) if out.ndim == 0 else out


def cor2_lambda(epsilon: float, rho: float, p: float, sigma: float) -> float:
    """Relaxation prescribed alongside :func:`cor2_min_iters`.

    ``min{p/15, (p / 18 sigma) sqrt(eps rho / (rho+1)), p eps^(1/3) / (40 sigma^(2/3))}``,
    with the first entry shrunk by a factor ``1 - 1e-9`` so that the strict
    hypothesis ``lam < p/15`` holds.
    """
    cands = [p / 15.0 * (1.0 - 1e-9)]
    if sigma > 0:
        cands.append(p / (18.0 * sigma) * math.sqrt(epsilon * rho / (rho + 1.0)))
        cands.append(p * epsilon ** (1.0 / 3.0) / (40.0 * sigma ** (2.0 / 3.0)))
    return min(cands)


def cor2_min_iters(epsilon: float, rho: float, p: float, sigma: float, psi0: float,
                   ratio_exponent: float = 1.5) -> int:
    """Iterations sufficient for ``E Psi^T <= epsilon`` with :func:`cor2_lambda`.

    The middle branch is ``18 sigma (1+rho)^e / (p rho^(3/2) eps^(1/2))``
    with ``e = ratio_exponent``. The prescribed relaxation requires
    ``e = 3/2``; smaller exponents undercount when that branch dominates.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if not rho > 0:
        raise ValueError("rho must be positive")
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    if epsilon >= 2.0 * psi0:
        return 0
    e = ratio_exponent
    branches = [15.0 * (1.0 + rho) / (rho * p)]
    if sigma > 0:
        branches.append(18.0 * sigma * (1.0 + rho) ** e / (p * rho ** 1.5 * math.sqrt(epsilon)))
        branches.append(40.0 * sigma ** (2.0 / 3.0) * (1.0 + rho)
                        / (p * rho * epsilon ** (1.0 / 3.0)))
    return math.ceil(max(branches) * math.log(2.0 * psi0 / epsilon))


def quadratic_cocoercivity(mu: float, L: float, gamma: float, cap: float = RHO_CAP) -> float:
    """Margin ``2 gamma mu / (1 - gamma mu)`` for a gradient step on a quadratic.

    Valid for spectra in ``[mu, L]`` and ``gamma <= 1/L``. When ``gamma mu``
    reaches one every direction is solved in one step and any margin works;
    ``cap`` is returned with a warning.
    """
    if not 0.0 < mu <= L:
        raise ValueError(f"need 0 < mu <= L, got mu={mu}, L={L}")
    if not 0.0 < gamma <= 1.0 / L * (1.0 + 1e-12):
        raise ValueError(f"need 0 < gamma <= 1/L, got gamma={gamma}, 1/L={1.0 / L}")
    t = gamma * mu
    if t >= 1.0:
        warnings.warn("gamma*mu >= 1: one-shot operator, returning the configured rho cap",
                      stacklevel=2)
        return cap
    return min(2.0 * t / (1.0 - t), cap)


# --- basic inequalities used in the analysis ---------------------------------------

def jensen_gap(X) -> float:
    """``(1/M) sum |x_m|^2 - |(1/M) sum x_m|^2`` (nonnegative)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    mean = X.mean(axis=0)
    return float(np.mean(np.sum(X * X, axis=1)) - mean @ mean)


def young_gap(x, y) -> float:
    """``2|x|^2 + 2|y|^2 - |x+y|^2`` (nonnegative)."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    s = x + y
    return float(2 * x @ x + 2 * y @ y - s @ s)


def moment_defect(X) -> float:
    """Relative defect in ``mean |X_m|^2 = V + |mean X|^2``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    lhs = float(np.mean(np.sum(X * X, axis=1)))
    mean = X.mean(axis=0)
    rhs = deviation(X) + float(mean @ mean)
    return abs(lhs - rhs) / max(lhs, 1e-300)


# --- reports -------------------------------------------------------------------

@dataclass
class TheoremReport:
    """Observed quantities against bound values at each checkpoint.

    ``verdict`` is ``"holds"``, ``"violated"`` or ``"inapplicable"``. A
    checkpoint passes when ``observed <= bound + tol * max(|bound|, scale)``;
    ``scale`` is the natural size of the problem (usually the initial
    squared distance), which keeps rounding noise from being reported once
    both sides have decayed to machine precision.
    """

    theorem: str
    verdict: str
    params: dict = field(default_factory=dict)
    labels: list = field(default_factory=list)
    observed: np.ndarray = field(default_factory=lambda: np.zeros(0))
    bound: np.ndarray = field(default_factory=lambda: np.zeros(0))
    allowance: np.ndarray = field(default_factory=lambda: np.zeros(0))
    reason: str = ""
    witness: str | None = None

    @property
    def holds(self) -> bool:
        return self.verdict == "holds"

    @property
    def violated(self) -> bool:
        return self.verdict == "violated"

    def to_text(self) -> str:
        lines = [f"# theorem: {self.theorem}", f"# verdict: {self.verdict}"]
        if self.reason:
            lines.append(f"# reason: {self.reason}")
        if self.witness:
            lines.append(f"# witness: {self.witness}")
        for key, val in self.params.items():
            lines.append(f"# {key} = {val}")
        lines.append("checkpoint,observed,bound,margin")
        for lab, o, b, a in zip(self.labels, self.observed, self.bound, self.allowance):
            o, b, a = float(o), float(b), float(a)
            lines.append(f"{lab},{o!r},{b!r},{(b + a - o)!r}")
        return "\n".join(lines) + "\n"


def _inapplicable(theorem: str, reason: str, **params) -> TheoremReport:
    return TheoremReport(theorem, "inapplicable", params, reason=reason)


def _verdict(theorem, params, labels, observed, bound, tol, scale) -> TheoremReport:
    observed = np.asarray(observed, dtype=float)
    bound = np.asarray(bound, dtype=float)
    allowance = tol * np.maximum(np.abs(bound), scale)
    bad = np.nonzero(observed > bound + allowance)[0]
    rep = TheoremReport(theorem, "holds", params, list(labels), observed, bound, allowance)
    if len(bad):
        j = int(bad[0])
        rep.verdict = "violated"
        rep.witness = f"{labels[j]}: observed {float(observed[j])!r} > bound {float(bound[j])!r}"
    return rep


def _combine(props) -> OperatorProperties:
    if isinstance(props, OperatorProperties):
        return props
    props = list(props)
    alphas = [q.alpha for q in props]
    chis = [q.chi for q in props]
    rhos = [q.rho for q in props]
    return OperatorProperties(
        alpha=max(alphas) if None not in alphas else None,
        chi=max(chis) if None not in chis else None,
        rho=min(rhos) if None not in rhos else None,
        firmly_nonexpansive=all(q.firmly_nonexpansive for q in props),
    )


def _uniform_gate(traj, theorem):
    if traj.meta.get("algorithm") != "local" or not traj.meta.get("uniform"):
        raise Inapplicable(f"{theorem} assumes uniform communication times t_n = nH; "
                           f"got {traj.meta.get('schedule')}")
    return traj.meta["H"]


def _epoch_distances(traj, x):
    E = traj.epoch_points()
    d = E - x
    return E, np.einsum("ij,ij->i", d, d)


def _check_thm1(traj, refs, props, tol):
    H = _uniform_gate(traj, "thm1")
    lam = traj.meta["lam"]
    if props.alpha is None:
        raise Inapplicable("operators are not declared averaged")
    if refs is None or refs.x_dagger is None:
        raise Inapplicable("needs the epoch fixed point x_dagger")
    try:
        z = zeta(H, props.alpha, lam)
    except ValueError as exc:
        raise Inapplicable(str(exc)) from exc
    E, dist = _epoch_distances(traj, refs.x_dagger)
    if len(E) < 2:
        raise Inapplicable("trajectory shorter than one epoch")
    steps = np.einsum("ij,ij->i", np.diff(E, axis=0), np.diff(E, axis=0))
    n = np.arange(len(steps))
    d0 = dist[0]
    labels, obs, bnd = [], [], []
    for j in n:
        labels.append(f"ii:n={j}")
        obs.append(dist[j + 1])
        bnd.append(dist[j] - (1.0 - z) / z * steps[j])
    partial = np.cumsum(steps)
    for j in n:
        labels.append(f"iii:n={j}")
        obs.append(partial[j])
        bnd.append(z / (1.0 - z) * d0)
    for j in n:
        labels.append(f"iv:n={j}")
        obs.append(steps[j])
        bnd.append(d0 / (z * (1.0 - z) * (j + 1)))
    params = {"H": H, "lambda": lam, "alpha": props.alpha, "zeta": z, "epochs": len(steps)}
    return _verdict("thm1", params, labels, obs, bnd, tol, max(d0, 1e-300))


def _check_thm2(traj, refs, props, tol):
    lam = traj.meta["lam"]
    if traj.meta.get("algorithm") != "local":
        raise Inapplicable("applies to the local method only")
    if not props.firmly_nonexpansive:
        raise Inapplicable("operators are not declared firmly nonexpansive")
    if refs is None or refs.sigma2 is None:
        raise Inapplicable("needs x_star and sigma^2")
    H = traj.meta["H"]
    d0 = float(traj.dist2_xstar[0])
    T = np.arange(1, len(traj))
    running = np.cumsum(traj.resid2[:-1]) / T
    thm3_rhs(1, lam, H, d0, refs.sigma2)  # hypothesis gate
    bound = 3.0 * d0 / (lam * T) + 36.0 * lam ** 2 * (H - 1) ** 2 * refs.sigma2
    params = {"H": H, "lambda": lam, "sigma2": refs.sigma2,
              "sigma2_term": 36.0 * lam ** 2 * (H - 1) ** 2 * refs.sigma2, "dist0_sq": d0}
    return _verdict("thm2", params, [f"T={t}" for t in T], running, bound, tol,
                    max(d0, 1e-300))


def _check_cor_sqrtMT(traj, refs, props, tol):
    if traj.meta.get("algorithm") != "local":
        raise Inapplicable("applies to the local method only")
    if not props.firmly_nonexpansive:
        raise Inapplicable("operators are not declared firmly nonexpansive")
    lam, M, H = traj.meta["lam"], traj.meta["M"], traj.meta["H"]
    T = traj.meta["total_iters"]
    want = cor_sqrtMT_lambda(T, M)
    if not math.isclose(lam, want, rel_tol=1e-12):
        raise Inapplicable(f"lambda={lam:g} differs from the prescribed sqrt(M/T)/8 = {want:g}")
    d0 = float(traj.dist2_xstar[0])
    bound = cor_sqrtMT_rhs(T, M, H, d0, refs.sigma2)
    observed = float(np.mean(traj.resid2[:T]))
    params = {"T": T, "M": M, "H": H, "lambda": lam, "sigma2": refs.sigma2}
    return _verdict("cor_sqrtMT", params, [f"T={T}"], [observed], [bound], tol,
                    max(d0, 1e-300))


def _check_thm4(traj, refs, props, tol, chi):
    H = _uniform_gate(traj, "thm4")
    lam = traj.meta["lam"]
    chi = props.chi if chi is None else chi
    if chi is None:
        raise Inapplicable("operators are not declared contractive")
    if refs is None or refs.x_dagger is None:
        raise Inapplicable("needs the epoch fixed point x_dagger")
    try:
        x = xi(lam, chi)
    except ValueError as exc:
        raise Inapplicable(str(exc)) from exc
    _, dist2 = _epoch_distances(traj, refs.x_dagger)
    dist = np.sqrt(dist2)
    n = np.arange(len(dist))
    labels = [f"ii:n={j}" for j in n[:-1]] + [f"iii:n={j}" for j in n]
    obs = np.concatenate([dist[1:], dist])
    bnd = np.concatenate([x ** H * dist[:-1], x ** (n * H) * dist[0]])
    params = {"H": H, "lambda": lam, "chi": chi, "xi": x, "xi^H": x ** H}
    return _verdict("thm4", params, labels, obs, bnd, tol, max(dist[0], 1e-300))


def _check_thm5(traj, refs, props, tol, chi):
    H = _uniform_gate(traj, "thm5")
    lam = traj.meta["lam"]
    if lam != 1.0:
        raise Inapplicable(f"the neighborhood bound assumes lambda = 1, got {lam}")
    chi = props.chi if chi is None else chi
    if chi is None:
        raise Inapplicable("operators are not declared contractive")
    if refs is None or refs.x_dagger is None or refs.mean_residual_norm is None:
        raise Inapplicable("needs x_star, x_dagger and the mean local residual")
    x = xi(lam, chi)
    S = neighborhood_bound(x, H, refs.mean_residual_norm)
    gap = float(np.linalg.norm(refs.x_dagger - refs.x_star))
    params = {"H": H, "lambda": lam, "chi": chi, "xi": x, "S": S,
              "mean_residual_norm": refs.mean_residual_norm}
    scale = max(float(np.linalg.norm(refs.x_star)), 1.0)
    return _verdict("thm5", params, ["|x_dagger-x_star|"], [gap], [S], tol, scale)


def check_trajectory(traj: Trajectory, refs: ReferencePoints | None, props, which: str,
                     tol: float = 1e-8, chi: float | None = None) -> TheoremReport:
    """Check one recorded run against one result.

    ``which`` is ``"thm1"`` (averaged operators, uniform epochs), ``"thm2"``
    (firmly nonexpansive, residual running mean), ``"cor_sqrtMT"``,
    ``"thm4"`` (linear rate toward ``x_dagger``) or ``"thm5"``
    (neighborhood radius). ``props`` is a combined
    :class:`OperatorProperties` or a list of per-node ones; ``chi``
    overrides the declared contraction factor (e.g. an exact spectral
    value). Use :func:`check_ensemble` for the randomized method.
    """
    props = _combine(props)
    try:
        if which == "thm1":
            return _check_thm1(traj, refs, props, tol)
        if which == "thm2":
            return _check_thm2(traj, refs, props, tol)
        if which == "cor_sqrtMT":
            return _check_cor_sqrtMT(traj, refs, props, tol)
        if which == "thm4":
            return _check_thm4(traj, refs, props, tol, chi)
        if which == "thm5":
            return _check_thm5(traj, refs, props, tol, chi)
        if which == "thm6":
            raise Inapplicable("thm6 is an expectation bound; use check_ensemble")
    except Inapplicable as exc:
        return _inapplicable(which, exc.reason, lam=traj.meta.get("lam"))
    raise ValueError(f"unknown theorem id {which!r}")


def check_ensemble(trajs: Sequence[Trajectory], refs: ReferencePoints, rho: float,
                   rel_slack: float = 0.05, se_mult: float = 3.0,
                   min_runs: int = 100) -> TheoremReport:
    """Compare the sample mean of the Lyapunov column to its expectation bound.

    Passes at ``k`` when ``mean <= rhs (1 + rel_slack) + se_mult * SE``.
    """
    theorem = "thm6"
    trajs = list(trajs)
    if len(trajs) < min_runs:
        return _inapplicable(theorem, f"needs at least {min_runs} seeded runs, got {len(trajs)}")
    meta = trajs[0].meta
    if any(t.meta.get("algorithm") != "randomized" for t in trajs):
        return _inapplicable(theorem, "applies to the randomized method only")
    lam, p = meta["lam"], meta["p"]
    if any(t.meta["lam"] != lam or t.meta["p"] != p for t in trajs):
        return _inapplicable(theorem, "runs disagree on lambda or p")
    if refs is None or refs.sigma2 is None:
        return _inapplicable(theorem, "needs x_star and sigma^2")
    Psi = np.array([t.psi for t in trajs])
    if np.any(np.isnan(Psi)):
        return _inapplicable(theorem, "Lyapunov column missing (no reference point)")
    psi0 = float(Psi[0, 0])
    k = np.arange(Psi.shape[1])
    try:
        rhs = thm6_rhs(k, lam, rho, p, psi0, refs.sigma2)
    except Inapplicable as exc:
        return _inapplicable(theorem, exc.reason, lam=lam, p=p, rho=rho)
    mean = Psi.mean(axis=0)
    se = Psi.std(axis=0, ddof=1) / math.sqrt(len(trajs))
    allowance = rel_slack * rhs + se_mult * se
    bad = np.nonzero(mean > rhs + allowance)[0]
    params = {"lambda": lam, "p": p, "rho": rho, "sigma2": refs.sigma2, "psi0": psi0,
              "runs": len(trajs), "rate": _thm6_rate(lam, rho, p)}
    rep = TheoremReport(theorem, "holds", params, [f"k={j}" for j in k], mean, rhs, allowance)
    if len(bad):
        j = int(bad[0])
        rep.verdict = "violated"
        rep.witness = f"k={j}: mean Psi {float(mean[j])!r} > bound {float(rhs[j])!r}"
    return rep
