"""
Weak Dirichlet splits ``D = M + A`` and the decomposition of ``u(., D)``.

For a field ``u`` with spatial gradient, ``u(s, D_s)`` splits into
``u(t0, D_t0)`` plus the martingale part ``M~ = int grad u(r, D_r) dM_r``
plus a remainder ``B(u)``.  The checks here test the claims made about
``B(u)``: orthogonality to the filtration's martingales, the explicit form for
C^{1,2} fields, and zero quadratic variation for fields Hölder-(1/2+gamma)
in time when ``A`` itself has zero quadratic variation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .fields import ScalarField, along
from .pathkit import (ConfigurationError, PathEnsemble, SamplePath, from_time_first,
                      stop_path)
from .regcalc import (ConvergenceReport, EpsilonSchedule, covariation, deviation_report,
                      eps_multiple, forward_integral, quadratic_variation, sweep,
                      ucp_diagnostic, weighted_bracket)

__all__ = [
    "WeakDirichletSplit",
    "RemainderProcess",
    "martingale_part_of_u",
    "remainder_B",
    "martingale_test_family",
    "orthogonality_test",
    "orthogonality_family",
    "c12_identity_check",
    "holder_bracket_check",
    "zero_qv_check",
    "bracket_uS_check",
    "write_decomposition_csv",
]


@dataclass
class WeakDirichletSplit:
    """``D = M + A`` with ``A(t0) = 0``; ``D`` is always formed as ``M + A``."""

    M: object
    A: object

    def __post_init__(self):
        if self.M.grid != self.A.grid:
            raise ConfigurationError("M and A live on different grids")
        if type(self.M) is not type(self.A):
            raise ConfigurationError("M and A must both be paths or both ensembles")
        if self.M.comp_shape != self.A.comp_shape:
            raise ConfigurationError("M and A dimensions differ")
        if np.any(self.A.time_first()[0] != 0):
            raise ConfigurationError("the remainder part A must start at 0")
        self.D = from_time_first(self.M, self.M.time_first() + self.A.time_first(),
                                 kind="weak-dirichlet")

    @property
    def grid(self):
        return self.M.grid

    @classmethod
    def from_sde(cls, S) -> "WeakDirichletSplit":
        """Split an Euler path into ``x0 + sum sigma dW`` and ``sum b1 dt``."""
        if "noise" not in S.meta:
            raise ConfigurationError("path was not produced by gen_sde_euler")
        noise, drift = S.meta["noise"], S.meta["drift"]
        axis = -2
        x0 = S.meta["x0"]
        M = np.concatenate([np.zeros_like(noise[..., :1, :]), np.cumsum(noise, axis=axis)],
                           axis=axis) + x0
        A = np.concatenate([np.zeros_like(drift[..., :1, :]), np.cumsum(drift, axis=axis)],
                           axis=axis)
        if isinstance(S, PathEnsemble):
            return cls(PathEnsemble(S.grid, M, S.seeds, {"kind": "martingale"}),
                       PathEnsemble(S.grid, A, S.seeds, {"kind": "bounded-variation"}))
        return cls(SamplePath(S.grid, M, {"kind": "martingale"}),
                   SamplePath(S.grid, A, {"kind": "bounded-variation"}))


@dataclass
class RemainderProcess:
    trajectory: object
    builder: str

    def __post_init__(self):
        if self.builder not in ("c01-defect", "c12-identity", "pde-representation"):
            raise ConfigurationError(f"unknown remainder builder {self.builder!r}")
        if np.any(self.trajectory.time_first()[0] != 0):
            raise ConfigurationError("a remainder starts at 0")


def martingale_part_of_u(u: ScalarField, split: WeakDirichletSplit):
    """``M~(s_i) = sum_{j<i} <grad u(s_j, D_j), dM_j>``, the discrete Itô sum."""
    grad = along(u, split.D, "grad")
    if grad.comp_shape != split.M.comp_shape:
        raise ConfigurationError("field gradient and martingale dimensions differ")
    return forward_integral(grad, split.M, k=1)


def remainder_B(u: ScalarField, split: WeakDirichletSplit) -> RemainderProcess:
    """``B(u)(s) = u(s, D_s) - u(t0, D_t0) - M~(s)``."""
    uD = along(u, split.D, "u").time_first()
    Mt = martingale_part_of_u(u, split).time_first()
    B = uD - uD[0] - Mt
    return RemainderProcess(from_time_first(split.D, B, kind="remainder"), "c01-defect")


def martingale_test_family(W, S=None, *, frequencies=(1, 2)):
    """The test family standing in for "every martingale of the filtration".

    ``W`` itself, ``int sin(k r) dW_r`` for each frequency, and
    ``int tanh(S_r) dW_r`` when a state process ``S`` is given.  Only scalar
    ``W`` is supported.
    """
    if W.comp_shape != (1,):
        raise ConfigurationError("test martingales are built from a scalar Brownian motion")
    family = {"W": W}
    s = W.grid.points
    tf = W.time_first()
    for k in frequencies:
        phi = np.broadcast_to(np.sin(k * s).reshape((-1,) + (1,) * (tf.ndim - 1)), tf.shape)
        family[f"int sin({k}r) dW"] = forward_integral(from_time_first(W, phi.copy()), W, k=1)
    if S is not None:
        phi = np.tanh(S.time_first()[..., :1])
        family["int tanh(S) dW"] = forward_integral(from_time_first(W, phi), W, k=1)
    return family


def orthogonality_test(A, N, schedule: EpsilonSchedule, *, tolerance=None,
                       name="orthogonality") -> ConvergenceReport:
    """Sup-deviation of ``[A, N]_eps`` from 0 along ``schedule``."""
    if isinstance(A, RemainderProcess):
        A = A.trajectory
    if len(schedule) < 3:
        raise ConfigurationError("orthogonality test needs at least 3 epsilon values")
    est = sweep(covariation, schedule, A, N, kind=name)
    zero = np.zeros_like(A.time_first())
    return ucp_diagnostic(est, zero, tolerance=tolerance, name=name)


def orthogonality_family(A, W, schedule, *, S=None, tolerance=None) -> dict:
    """:func:`orthogonality_test` against every member of :func:`martingale_test_family`."""
    return {name: orthogonality_test(A, N, schedule, tolerance=tolerance,
                                     name=f"[A, {name}]")
            for name, N in martingale_test_family(W, S).items()}


def _multiples(path, eps, schedule):
    if schedule is not None:
        return tuple(schedule)
    return (eps_multiple(path, eps),)


def _dev_between(lhs, rhs):
    diff = np.abs(lhs.time_first() - rhs.time_first())
    axes = (0,) + tuple(range(2 if isinstance(lhs, PathEnsemble) else 1, diff.ndim))
    return np.atleast_1d(diff.max(axis=axes))


def _identity_path(like, n):
    eye = np.eye(n)
    if isinstance(like, PathEnsemble):
        vals = np.broadcast_to(eye, (like.n_paths, like.grid.steps + 1, n, n))
        return PathEnsemble(like.grid, vals)
    return SamplePath(like.grid, np.broadcast_to(eye, (like.grid.steps + 1, n, n)))


def c12_identity_rhs(u: ScalarField, split: WeakDirichletSplit, k: int):
    """``int d_t u dr + 1/2 Tr int hess u d[M, M] + int grad u d^- A`` at ``eps = k dt``."""
    if u.dt_u is None or u.hess_x is None:
        raise ConfigurationError("C^{1,2} identity needs dt_u and hess_x")
    D, M, A = split.D, split.M, split.A
    dt = D.grid.dt
    ut = along(u, D, "dt").time_first()
    time_part = np.zeros_like(ut)
    np.cumsum(ut[:-1] * dt, axis=0, out=time_part[1:])
    H = along(u, D, "hess")
    n = M.comp_shape[0]
    bracket = weighted_bracket(H, M, M, _identity_path(M, n), k=k).time_first()
    second = 0.5 * np.trace(bracket, axis1=-2, axis2=-1)[..., None]
    drift = forward_integral(along(u, D, "grad"), A, k=k).time_first()
    return from_time_first(D, time_part + second + drift, kind="c12-identity")


def c12_identity_check(u: ScalarField, split: WeakDirichletSplit, eps=None, *,
                       schedule=None, tolerance=None) -> ConvergenceReport:
    """Compare the C^{0,1} remainder with its explicit C^{1,2} form.

    The Hessian term carries the factor 1/2 of the Itô formula.
    """
    lhs = remainder_B(u, split).trajectory
    ks = _multiples(lhs, eps, schedule)
    devs = [_dev_between(lhs, c12_identity_rhs(u, split, k)) for k in ks]
    return deviation_report(f"c12-identity[{u.name}]", np.array(ks) * lhs.grid.dt, devs,
                            tolerance=tolerance, require_monotone=False)


def holder_bracket_check(f: ScalarField, g: ScalarField, V, X, eps=None, *, schedule=None,
                         tolerance=None) -> ConvergenceReport:
    """``[f(V, X), g(V, X)]`` against ``int grad f d[X, X^*] grad g^*``."""
    for fld in (f, g):
        if fld.grad_x is None:
            raise ConfigurationError("Hölder bracket check needs spatial gradients")
    fX = along(f, X, "u", first=V)
    gX = along(g, X, "u", first=V)
    df = along(f, X, "grad", first=V)
    dg = along(g, X, "grad", first=V)
    ks = _multiples(X, eps, schedule)
    devs = [_dev_between(covariation(fX, gX, k=k), weighted_bracket(df, X, X, dg, k=k))
            for k in ks]
    return deviation_report(f"holder-bracket[{f.name},{g.name}]", np.array(ks) * X.grid.dt,
                            devs, tolerance=tolerance, require_monotone=False)


def zero_qv_check(B, schedule: EpsilonSchedule, *, tolerance=None,
                  name="zero-qv") -> ConvergenceReport:
    """Sup of ``QV_eps(B)`` along ``schedule``; it must decrease to 0."""
    traj = B.trajectory if isinstance(B, RemainderProcess) else B
    est = sweep(quadratic_variation, schedule, traj, kind=name)
    return ucp_diagnostic(est, np.zeros_like(traj.time_first()), tolerance=tolerance,
                          name=name)


def bracket_uS_check(u: ScalarField, S, eps=None, *, schedule=None,
                     tolerance=None) -> ConvergenceReport:
    """``[u(., S), S]`` against ``int d_x u(r, S_r) d[S]_r`` for scalar ``S``."""
    if S.comp_shape != (1,):
        raise ConfigurationError("bracket check is one-dimensional")
    uS = along(u, S, "u")
    du = along(u, S, "grad")
    one = from_time_first(S, np.ones_like(S.time_first()))
    ks = _multiples(S, eps, schedule)
    devs = [_dev_between(covariation(uS, S, k=k), weighted_bracket(du, S, S, one, k=k))
            for k in ks]
    return deviation_report(f"bracket-uS[{u.name}]", np.array(ks) * S.grid.dt, devs,
                            tolerance=tolerance, require_monotone=False)


def stopped_orthogonality(A, N, rule, schedule, *, tolerance=None) -> ConvergenceReport:
    """Orthogonality of the stopped remainder ``A^tau`` against ``N``."""
    if isinstance(A, RemainderProcess):
        A = A.trajectory
    return orthogonality_test(stop_path(A, rule), N, schedule, tolerance=tolerance,
                              name="stopped-orthogonality")


def write_decomposition_csv(u: ScalarField, split: WeakDirichletSplit, fp, *,
                            path: int = 0) -> None:
    """Trace ``s,u_of_D,M_tilde,B_remainder`` of one path."""
    uD = along(u, split.D, "u").time_first()
    Mt = martingale_part_of_u(u, split).time_first()
    B = remainder_B(u, split).trajectory.time_first()
    if isinstance(split.D, PathEnsemble):
        uD, Mt, B = uD[:, path], Mt[:, path], B[:, path]
    writer = csv.writer(fp, lineterminator="\n")
    writer.writerow(["s", "u_of_D", "M_tilde", "B_remainder"])
    for s, a, b, c in zip(split.grid.points, uD[:, 0], Mt[:, 0], B[:, 0]):
        writer.writerow([f"{s:.17g}", f"{a:.17g}", f"{b:.17g}", f"{c:.17g}"])
