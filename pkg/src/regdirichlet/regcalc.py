"""
Regularized forward integrals and covariations on a uniform grid.

With ``eps = k * dt`` the ``dr``-integrals become left Riemann sums::

    I(s_i) = sum_{j < i} X_j (Y_{j+k} - Y_j) / k
    C(s_i) = sum_{j < i} (X_{j+k} - X_j) (Y_{j+k} - Y_j) / k

where indices beyond the last grid point are clamped (constant extension).
For ``k = 1`` these are the discrete Itô sum and the realized covariation.
Every estimator accepts a :class:`SamplePath` or a :class:`PathEnsemble` and
returns the same kind.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .pathkit import (ConfigurationError, PathEnsemble, SamplePath, StoppingRule,
                      from_time_first, stop_at, stopping_index)

__all__ = [
    "EpsilonSchedule",
    "RegularizedEstimate",
    "ConvergenceReport",
    "DEFAULT_MULTIPLES",
    "eps_multiple",
    "forward_integral",
    "covariation",
    "quadratic_variation",
    "covariation_matrix",
    "weighted_bracket",
    "sweep",
    "ucp_diagnostic",
    "deviation_report",
    "stopped_bracket_check",
    "ensemble_mean",
]

DEFAULT_MULTIPLES = (256, 128, 64, 32, 16, 8, 4, 2, 1)


@dataclass(frozen=True)
class EpsilonSchedule:
    """Strictly decreasing multiples ``k_j`` of ``dt``; ``eps_j = k_j dt``."""

    multiples: tuple = DEFAULT_MULTIPLES

    def __post_init__(self):
        m = tuple(int(k) for k in self.multiples)
        if not m:
            raise ConfigurationError("empty epsilon schedule")
        if any(k != kk for k, kk in zip(m, self.multiples)):
            raise ConfigurationError("epsilon multiples must be integers")
        if any(a <= b for a, b in zip(m, m[1:])):
            raise ConfigurationError(f"epsilon multiples must strictly decrease: {m}")
        if m[-1] < 1:
            raise ConfigurationError("epsilon below dt is not representable on the grid")
        object.__setattr__(self, "multiples", m)

    def __iter__(self):
        return iter(self.multiples)

    def __len__(self):
        return len(self.multiples)

    def epsilons(self, dt: float) -> np.ndarray:
        return np.array(self.multiples, dtype=float) * dt


def eps_multiple(path, eps: float | int | None = None, *, k: int | None = None) -> int:
    """Integer ``k`` with ``eps = k dt``; rejects ``eps`` off the dt lattice."""
    if k is not None:
        if int(k) != k or k < 1:
            raise ConfigurationError(f"epsilon multiple must be a positive integer, got {k}")
        return int(k)
    if eps is None:
        return 1
    dt = path.grid.dt
    ratio = eps / dt
    kk = round(ratio)
    if kk < 1 or abs(ratio - kk) > 1e-9 * max(1.0, ratio):
        raise ConfigurationError(f"eps={eps} is not a positive integer multiple of dt={dt}")
    return int(kk)


def _check_grid(*paths):
    grid = paths[0].grid
    kinds = {isinstance(p, PathEnsemble) for p in paths}
    for p in paths[1:]:
        if p.grid != grid:
            raise ConfigurationError("paths live on different grids")
    if len(kinds) > 1:
        raise ConfigurationError("mixing a single path with an ensemble; broadcast first")
    n = {p.n_paths for p in paths if isinstance(p, PathEnsemble)}
    if len(n) > 1:
        raise ConfigurationError(f"ensembles of different sizes: {sorted(n)}")


def _increments(tf: np.ndarray, k: int) -> np.ndarray:
    idx = np.minimum(np.arange(tf.shape[0]) + k, tf.shape[0] - 1)
    return tf[idx] - tf


def _running(terms: np.ndarray, k: int) -> np.ndarray:
    # terms indexed by left point j = 0..steps; trajectory at i sums j < i
    out = np.zeros_like(terms)
    np.cumsum(terms[:-1], axis=0, out=out[1:])
    if k != 1:
        out /= k
    return out


def forward_integral(X, Y, eps=None, *, k=None):
    """Regularized forward integral ``int X d^- Y``.

    ``X`` scalar (component shape ``(1,)``) multiplies each component of
    ``Y``; a vector ``X`` of the same length as ``Y`` is paired by inner
    product; a matrix ``X`` of shape ``(m, n)`` acts on ``Y`` of dimension n.
    """
    _check_grid(X, Y)
    k = eps_multiple(Y, eps, k=k)
    xt, yt = X.time_first(), Y.time_first()
    dY = _increments(yt, k)
    xs, ys = X.comp_shape, Y.comp_shape
    if len(ys) != 1:
        raise ConfigurationError("integrator must be vector valued")
    if xs == (1,):
        terms = xt * dY
    elif xs == ys:
        terms = np.sum(xt * dY, axis=-1, keepdims=True)
    elif len(xs) == 2 and xs[1] == ys[0]:
        terms = np.einsum("...ij,...j->...i", xt, dY)
    else:
        raise ConfigurationError(f"integrand shape {xs} incompatible with integrator {ys}")
    return from_time_first(Y, _running(terms, k), kind="forward-integral", k=k)


def covariation(X, Y, eps=None, *, k=None):
    """Regularized scalar covariation ``[X, Y]``."""
    _check_grid(X, Y)
    if X.comp_shape != (1,) or Y.comp_shape != (1,):
        raise ConfigurationError("covariation takes scalar paths; use covariation_matrix")
    k = eps_multiple(X, eps, k=k)
    terms = _increments(X.time_first(), k) * _increments(Y.time_first(), k)
    return from_time_first(X, _running(terms, k), kind="covariation", k=k)


def quadratic_variation(X, eps=None, *, k=None):
    return covariation(X, X, eps, k=k)


def covariation_matrix(X, Y, eps=None, *, k=None):
    """Matrix of covariations ``[X^i, Y^j]``, component shape ``(n, d)``."""
    _check_grid(X, Y)
    k = eps_multiple(X, eps, k=k)
    dX = _increments(X.time_first(), k)
    dY = _increments(Y.time_first(), k)
    terms = dX[..., :, None] * dY[..., None, :]
    return from_time_first(X, _running(terms, k), kind="covariation", k=k)


def weighted_bracket(A, X, Y, C, eps=None, *, k=None):
    """``int A d[X, Y^*] C``: running sum of ``A_j dX_j dY_j^T C_j / k``.

    ``A`` may be a matrix path ``(p, n)`` or a vector path ``(n,)`` read as a
    row; ``C`` a matrix path ``(d, q)`` or a vector ``(d,)`` read as a
    column.  Scalar paths ``(1,)`` on either side act as scalars.  A row
    times a column gives a scalar path.
    """
    _check_grid(A, X, Y, C)
    k = eps_multiple(X, eps, k=k)
    dX = _increments(X.time_first(), k)
    dY = _increments(Y.time_first(), k)
    n, d = X.comp_shape[0], Y.comp_shape[0]
    outer = dX[..., :, None] * dY[..., None, :]
    at, ct = A.time_first(), C.time_first()
    a_scalar = A.comp_shape == (1,) and n != 1
    c_scalar = C.comp_shape == (1,) and d != 1
    squeeze = False
    if a_scalar:
        left = at[..., None] * outer
    else:
        a = at[..., None, :] if len(A.comp_shape) == 1 else at
        if a.shape[-1] != n:
            raise ConfigurationError(f"weight A shape {A.comp_shape} incompatible with X dim {n}")
        left = np.einsum("...ij,...jk->...ik", a, outer)
        squeeze = len(A.comp_shape) == 1
    if c_scalar:
        terms = left * ct[..., None]
    else:
        c = ct[..., :, None] if len(C.comp_shape) == 1 else ct
        if c.shape[-2] != d:
            raise ConfigurationError(f"weight C shape {C.comp_shape} incompatible with Y dim {d}")
        terms = np.einsum("...ij,...jk->...ik", left, c)
        squeeze = squeeze and len(C.comp_shape) == 1
    if squeeze:
        terms = terms[..., 0, :]
    return from_time_first(X, _running(terms, k), kind="weighted-bracket", k=k)


# ----------------------------------------------------------- diagnostics


def ensemble_mean(values: Sequence[float]) -> tuple[float, float]:
    """Mean and standard error with order-independent (exactly rounded) sums."""
    v = np.asarray(values, dtype=float).ravel()
    n = v.size
    mean = math.fsum(v) / n
    if n < 2:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var / n)


@dataclass
class RegularizedEstimate:
    """One estimator evaluated along an epsilon schedule."""

    kind: str
    schedule: EpsilonSchedule
    trajectories: dict
    operands: tuple = ()

    @property
    def grid(self):
        return next(iter(self.trajectories.values())).grid

    def finest(self):
        return self.trajectories[self.schedule.multiples[-1]]


def sweep(estimator: Callable, schedule: EpsilonSchedule, *paths, kind=None,
          operands=()) -> RegularizedEstimate:
    """Evaluate ``estimator(*paths, k=k)`` for every multiple in ``schedule``."""
    traj = {k: estimator(*paths, k=k) for k in schedule}
    return RegularizedEstimate(kind or getattr(estimator, "__name__", "estimate"),
                               schedule, traj, tuple(operands))


@dataclass
class ConvergenceReport:
    """Per-epsilon ensemble statistics of sup-deviations.

    ``passed`` means the final (finest) mean deviation is within ``tolerance``
    and, when ``require_monotone`` is set, that the deviations decrease along
    the schedule up to a 3-standard-error slack.
    """

    name: str
    epsilons: np.ndarray
    mean_sup_dev: np.ndarray
    std_err: np.ndarray
    n_paths: int
    tolerance: float
    monotone: bool
    decay_exponent: float | None
    require_monotone: bool = True
    detail: dict = field(default_factory=dict)

    @property
    def final(self) -> float:
        return float(self.mean_sup_dev[-1])

    @property
    def passed(self) -> bool:
        ok = self.final <= self.tolerance
        return ok and (self.monotone or not self.require_monotone)

    def at(self, eps: float) -> float:
        i = int(np.argmin(np.abs(self.epsilons - eps)))
        return float(self.mean_sup_dev[i])

    def summary(self) -> str:
        exp = "undefined" if self.decay_exponent is None else f"{self.decay_exponent:.3f}"
        return (f"{self.name}: final={self.final:.4g} tol={self.tolerance:.4g} "
                f"monotone={self.monotone} decay_exponent={exp} "
                f"{'PASS' if self.passed else 'FAIL'}")

    def write_csv(self, fp) -> None:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(["epsilon", "mean_sup_dev", "std_err", "n_paths"])
        for e, m, s in zip(self.epsilons, self.mean_sup_dev, self.std_err):
            writer.writerow([f"{e:.17g}", f"{m:.17g}", f"{s:.17g}", self.n_paths])


def _sup_dev(traj, target_tf):
    tf = traj.time_first()
    diff = np.abs(tf - target_tf) if target_tf is not None else np.abs(tf)
    axes = (0,) + tuple(range(2 if isinstance(traj, PathEnsemble) else 1, tf.ndim))
    sup = diff.max(axis=axes)
    return np.atleast_1d(sup)


def _monotone(means, ses):
    slack = 3.0 * np.maximum(ses[:-1], ses[1:])
    return bool(np.all(means[1:] <= means[:-1] + slack + 1e-15))


def _decay_exponent(eps, means):
    ok = means > 0
    if ok.sum() < 2:
        return None
    slope, _ = np.polyfit(np.log(eps[ok]), np.log(means[ok]), 1)
    return float(slope)


def default_tolerance(se_final: float, target_norm: float) -> float:
    """``5 SE + 0.05 * ||target||_sup``, or ``5 SE + 0.05`` for a zero target."""
    scale = 0.05 * target_norm if target_norm > 0 else 0.05
    return 5.0 * se_final + scale


def deviation_report(name, epsilons, sup_devs, *, tolerance=None, target_norm=0.0,
                     require_monotone=True, detail=None) -> ConvergenceReport:
    """Build a report from per-epsilon arrays of per-path sup-deviations."""
    stats = [ensemble_mean(d) for d in sup_devs]
    means = np.array([m for m, _ in stats])
    ses = np.array([s for _, s in stats])
    eps = np.asarray(epsilons, dtype=float)
    if tolerance is None:
        tolerance = default_tolerance(ses[-1], target_norm)
    return ConvergenceReport(
        name, eps, means, ses, int(np.asarray(sup_devs[0]).size), float(tolerance),
        _monotone(means, ses), _decay_exponent(eps, means), require_monotone,
        detail or {})


def ucp_diagnostic(estimates: RegularizedEstimate, target=None, *, tolerance=None,
                   require_monotone=True, name=None) -> ConvergenceReport:
    """Sup-over-grid deviations of each trajectory from ``target``.

    Without a target the finest-epsilon trajectory is the reference.  Needs
    at least three schedule entries.
    """
    if len(estimates.schedule) < 3:
        raise ConfigurationError("ucp diagnostic needs at least 3 epsilon values")
    ref = target if target is not None else estimates.finest()
    ref_tf = ref.time_first() if not isinstance(ref, np.ndarray) else ref
    if isinstance(ref, SamplePath) and isinstance(estimates.finest(), PathEnsemble):
        ref_tf = ref.values[:, None]
    devs = [_sup_dev(estimates.trajectories[k], ref_tf) for k in estimates.schedule]
    norm = float(np.max(np.abs(ref_tf))) if target is not None else 0.0
    dt = estimates.grid.dt
    return deviation_report(name or estimates.kind, estimates.schedule.epsilons(dt), devs,
                            tolerance=tolerance, target_norm=norm,
                            require_monotone=require_monotone)


def stopped_bracket_check(X, Y, rule: StoppingRule, eps=None, *, schedule=None,
                          tolerance=None) -> ConvergenceReport:
    """Compare ``[X, Y]^tau`` with ``[X^tau, Y^tau]``.

    The stopping index is computed once (from ``rule.reference`` or from
    ``X``) and applied to both sides.
    """
    _check_grid(X, Y)
    if schedule is None:
        k = eps_multiple(X, eps)
        multiples = (k,)
    else:
        multiples = tuple(schedule)
    kstar = stopping_index(X if rule.reference is None else rule.reference, rule)
    if isinstance(X, PathEnsemble) and np.ndim(kstar) == 0:
        kstar = np.full(X.n_paths, kstar)
    Xs, Ys = stop_at(X, kstar), stop_at(Y, kstar)
    devs = []
    for k in multiples:
        lhs = stop_at(covariation(X, Y, k=k), kstar)
        rhs = covariation(Xs, Ys, k=k)
        devs.append(_sup_dev(lhs, rhs.time_first()))
    report = deviation_report("stopped-bracket", np.array(multiples) * X.grid.dt, devs,
                              tolerance=tolerance, require_monotone=False)
    return report
