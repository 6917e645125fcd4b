"""
Representation of ``u(s, S_s)`` for strong solutions ``u`` of the backward
problem along Euler paths ``dS = b1 ds + sigma dW``:

    u(s, S_s) = u(t0, S_t0) + sum <grad u, sigma dW> + B(s),
    B(s) = sum h dt + sum <grad u, b1 - b> dt,

with a Girsanov route removing the drift discrepancy ``b1 - b`` and a
statistical probe of the closedness of martingales under u.c.p. limits.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dirichlet import RemainderProcess, WeakDirichletSplit, remainder_B
from .fields import ScalarField, along
from .pathkit import (ConfigurationError, PathEnsemble, SamplePath, StoppingRule,
                      from_time_first, gen_sde_euler, stop_at, stopping_index)
from .pde import CauchyProblem, EllipticProblem, StrongSolutionSequence
from .regcalc import (ConvergenceReport, deviation_report, ensemble_mean,
                      quadratic_variation)

__all__ = [
    "SigmaMismatchError",
    "GirsanovHypothesisError",
    "RepresentationCase",
    "GirsanovWeight",
    "GirsanovReport",
    "ClosureReport",
    "remainder_via_pde",
    "representation_residual",
    "residual_profile",
    "write_residual_csv",
    "residual_refinement",
    "coarsen",
    "check_assumption_convergence",
    "girsanov_reweight",
    "representation_via_girsanov",
    "stopped_remainder",
    "stopped_defect_check",
    "elliptic_representation_residual",
    "martingale_closure_check",
]


class SigmaMismatchError(ConfigurationError):
    """The diffusion used for the paths is not the one of the PDE."""


class GirsanovHypothesisError(RuntimeError):
    """``sigma^+ (b1 - b)`` is unbounded or ``b1 - b`` leaves the range of ``sigma``."""

    def __init__(self, message, weight=None):
        super().__init__(message)
        self.weight = weight


@dataclass
class RepresentationCase:
    """A strong solution ``u`` paired with an SDE ensemble.

    ``ensemble`` must come from :func:`gen_sde_euler`; its ``sigma`` has to
    be the very object held by ``prob`` (identity, not equality).  ``b1`` is
    read from the ensemble, so path-functional drifts are supported.
    """

    u: ScalarField
    prob: CauchyProblem | EllipticProblem
    ensemble: PathEnsemble
    seq: StrongSolutionSequence | None = None
    name: str = ""

    def __post_init__(self):
        meta = self.ensemble.meta
        if "noise" not in meta or "sigma" not in meta:
            raise ConfigurationError("ensemble was not produced by gen_sde_euler")
        expected = self.prob.sde_sigma if self.elliptic else self.prob.sigma
        if meta["sigma"] is not expected:
            raise SigmaMismatchError(
                "the diffusion coefficient of the paths must coincide with the PDE's sigma")

    @property
    def b1(self) -> Callable:
        return self.ensemble.meta["b1"]

    @property
    def grid(self):
        return self.ensemble.grid

    @property
    def elliptic(self) -> bool:
        return isinstance(self.prob, EllipticProblem)


# ----------------------------------------------------------------- helpers


def _times_like(grid, tf):
    return np.broadcast_to(grid.points.reshape((-1,) + (1,) * (tf.ndim - 2)), tf.shape[:-1])


def _coeff(fn, t, x, elliptic):
    return np.asarray(fn(x) if elliptic else fn(t, x), dtype=float)


def _pad_cumsum(terms):
    """``out[i] = sum_{j<i} terms[j]`` along axis 0 (time first)."""
    out = np.zeros((terms.shape[0] + 1,) + terms.shape[1:])
    np.cumsum(terms, axis=0, out=out[1:])
    return out


def _step_terms(case: RepresentationCase, h_mode: str = "h"):
    """Per-step pieces ``(h dt, <g, b1 - b> dt, <g, sigma dW>)``, time first, shape ``(steps, N)``."""
    S = case.ensemble
    tf = S.time_first()
    t = _times_like(case.grid, tf)
    dt = case.grid.dt
    grad = along(case.u, S, "grad").time_first()[:-1]
    xs, ts = tf[:-1], t[:-1]
    drift = np.moveaxis(S.meta["drift"], -2, 0)
    noise = np.moveaxis(S.meta["noise"], -2, 0)
    b = _coeff(case.prob.b, ts, xs, case.elliptic)
    h = np.broadcast_to(_coeff(case.prob.h, ts, xs, case.elliptic), ts.shape)
    if h_mode == "consistent":
        uval = along(case.u, S, "u").time_first()[:-1, ..., 0]
        h = -(h + case.prob.lam * uval)
    elif h_mode != "h":
        raise ConfigurationError(f"unknown source mode {h_mode!r}")
    # drift increments are b1 dt exactly as used by the Euler scheme
    bv = np.sum(grad * drift, axis=-1) - np.sum(grad * b, axis=-1) * dt
    mart = np.sum(grad * noise, axis=-1)
    return h * dt, bv, mart


def _wrap(case, arr, kind):
    return from_time_first(case.ensemble, arr[..., None], kind=kind)


# ------------------------------------------------------------- remainders


def remainder_via_pde(case: RepresentationCase, index: int | None = None) -> RemainderProcess:
    """``B(s) = sum h dt + sum <grad u, b1> dt - sum <grad u, b> dt`` from PDE data.

    With ``index`` the remainder of that single path is returned.
    """
    hdt, bv, _ = _step_terms(case)
    B = _wrap(case, _pad_cumsum(hdt + bv), "pde-remainder")
    if index is not None:
        B = B.path(index)
    return RemainderProcess(B, "pde-representation")


def _residual(case: RepresentationCase, h_mode="h", shift: float = 0.0):
    hdt, bv, mart = _step_terms(case, h_mode)
    uS = along(case.u, case.ensemble, "u").time_first()[..., 0]
    Bt = _pad_cumsum(hdt + shift * case.grid.dt + bv)
    return uS - uS[0] - _pad_cumsum(mart) - Bt


def residual_profile(R: np.ndarray):
    """Per-time ``(mean |R(s)|, SE)`` with compensated sums over paths."""
    stats = [ensemble_mean(np.abs(row)) for row in R]
    return np.array([m for m, _ in stats]), np.array([s for _, s in stats])


def write_residual_csv(report: ConvergenceReport, fp) -> None:
    """Header ``s,mean_abs_residual,std_err`` from a residual report's profile."""
    s, m, se = (report.detail[k] for k in ("s", "mean_abs_residual", "std_err"))
    writer = csv.writer(fp, lineterminator="\n")
    writer.writerow(["s", "mean_abs_residual", "std_err"])
    for row in zip(s, m, se):
        writer.writerow([f"{v:.17g}" for v in row])


def representation_residual(case: RepresentationCase, *, tolerance: float = 5e-3,
                            h_shift: float = 0.0, name: str | None = None) -> ConvergenceReport:
    """Ensemble mean of ``sup_s |R(s)|`` for the representation identity.

    ``R(s) = u(s, S_s) - u(t0, S_t0) - sum <grad u, sigma dW> - B(s)``.
    ``h_shift`` adds a constant to ``h`` inside ``B`` (a negative control:
    ``u`` then no longer solves the problem and ``R`` drifts like ``-(s - t0)``).
    The report's single entry is at ``dt``; ``detail`` carries the per-time
    profile and ``sup_s |E R(s)|``.
    """
    R = _residual(case, shift=h_shift)
    return _residual_report(case, R, tolerance, name or f"representation[{case.name}]")


def _residual_report(case, R, tolerance, name, extra=None):
    sup = np.max(np.abs(R), axis=0)
    prof, se = residual_profile(R)
    signed = np.array([ensemble_mean(row)[0] for row in R])
    detail = {"s": case.grid.points, "mean_abs_residual": prof, "std_err": se,
              "sup_mean_residual": float(np.max(np.abs(signed))), "mean_residual": signed}
    detail.update(extra or {})
    return deviation_report(name, [case.grid.dt], [sup], tolerance=tolerance,
                            require_monotone=False, detail=detail)


def coarsen(path, factor: int):
    """Keep every ``factor``-th grid point of a path or ensemble."""
    from .pathkit import make_grid
    g = path.grid
    if factor < 1 or g.steps % factor:
        raise ConfigurationError("coarsening factor must divide the number of steps")
    grid = make_grid(g.t0, g.T, g.steps // factor)
    if isinstance(path, SamplePath):
        return SamplePath(grid, path.values[::factor], dict(path.meta))
    return PathEnsemble(grid, path.values[:, ::factor], path.seeds, dict(path.meta))


def residual_refinement(u: ScalarField, prob, W: PathEnsemble, x0, *, b1=None,
                        factors: Sequence[int] = (16, 8, 4, 2, 1), tolerance: float = 5e-3,
                        workers: int = 1, name: str = "residual-refinement") -> ConvergenceReport:
    """Residual statistics as ``dt`` is refined on the same Brownian paths."""
    b1 = b1 if b1 is not None else prob.b
    devs, dts = [], []
    for f in factors:
        Wc = coarsen(W, f)
        S = gen_sde_euler(Wc.grid, b1, prob.sigma, x0, Wc, workers=workers)
        R = _residual(RepresentationCase(u, prob, S))
        devs.append(np.max(np.abs(R), axis=0))
        dts.append(Wc.grid.dt)
    return deviation_report(name, dts, devs, tolerance=tolerance, require_monotone=True)


def _discrepancy(case: RepresentationCase):
    """``b1 - b`` at the left grid points, shape ``(steps, N, n)``."""
    S = case.ensemble
    tf = S.time_first()
    t = _times_like(case.grid, tf)
    drift = np.moveaxis(S.meta["drift"], -2, 0) / case.grid.dt
    return drift - _coeff(case.prob.b, t[:-1], tf[:-1], case.elliptic)


def check_assumption_convergence(case: RepresentationCase, *, tolerance: float = 0.02,
                                 name: str | None = None) -> ConvergenceReport:
    """``sup_s |sum <grad u_n - grad u, b1 - b> dt|`` along the sequence.

    The reference ``grad u`` is ``case.u``.  Entries are indexed by the
    mollification scale ``1/n``; a non-monotone tail is flagged in
    ``detail['monotone']`` but does not fail the report.  ``detail`` also
    carries the uniform gradient gaps logged by the sequence.
    """
    if case.seq is None:
        raise ConfigurationError("assumption check needs a strong-solution sequence")
    S = case.ensemble
    d = _discrepancy(case)
    g = along(case.u, S, "grad").time_first()[:-1]
    devs = []
    for u_n, _, _ in case.seq.entries:
        gn = along(u_n.as_field(), S, "grad").time_first()[:-1]
        integrand = np.sum((gn - g) * d, axis=-1) * case.grid.dt
        devs.append(np.max(np.abs(_pad_cumsum(integrand)), axis=0))
    rep = deviation_report(name or f"assumption[{case.name}]", case.seq.scales, devs,
                           tolerance=tolerance, require_monotone=False,
                           detail={"uniform_grad_gap": list(case.seq.log["grad"])})
    rep.detail["monotone"] = rep.monotone
    return rep


# ------------------------------------------------------------- Girsanov


@dataclass
class GirsanovWeight:
    """Discrete density ``dQ/dP`` on ``F_s`` for each path.

    ``log_weight`` is ``(N, steps + 1)``; ``theta`` is ``(N, steps, m)``.
    """

    log_weight: np.ndarray
    theta: np.ndarray
    bound: float
    sup_theta: float
    range_defect: float
    violated: bool

    @property
    def terminal(self) -> np.ndarray:
        return np.exp(self.log_weight[:, -1])

    def normalization(self):
        """``(mean, SE)`` of ``exp(log-weight(T))``."""
        return ensemble_mean(self.terminal)

    def summary(self) -> dict:
        mean, se = self.normalization()
        return {"mean_weight": mean, "se": se, "bound": self.bound,
                "violated": self.violated, "sup_theta": self.sup_theta,
                "range_defect": self.range_defect}


def girsanov_reweight(case: RepresentationCase, bound: float, *, range_tol: float = 1e-8,
                      refuse: bool = True) -> GirsanovWeight:
    """``theta = sigma^+ (b1 - b)`` and ``log w = -sum <theta, dW> - 1/2 sum |theta|^2 dt``.

    The pseudo-inverse drops singular values below ``1e-10 * sigma_max``.
    When ``sup |theta| > bound`` or ``sigma theta`` misses ``b1 - b`` by more
    than ``range_tol`` the hypothesis fails: a
    :class:`GirsanovHypothesisError` is raised (``refuse=True``) carrying the
    flagged weight, otherwise the weight is returned with ``violated`` set.
    """
    S = case.ensemble
    tf = S.time_first()
    t = _times_like(case.grid, tf)[:-1]
    d = _discrepancy(case)
    sigma = case.prob.sigma
    const = getattr(sigma, "constant", None)
    if const is not None and const.shape[0] != d.shape[-1]:
        raise ConfigurationError("sigma rows must match the state dimension")
    if const is not None:
        sig = np.broadcast_to(const, d.shape[:-1] + const.shape)
        pinv = np.broadcast_to(np.linalg.pinv(const, rcond=1e-10), d.shape[:-1] + const.shape[::-1])
    else:
        sig = _coeff(sigma, t, tf[:-1], case.elliptic)
        pinv = np.linalg.pinv(sig, rcond=1e-10)
    theta = np.einsum("...ij,...j->...i", pinv, d)
    back = np.einsum("...ij,...j->...i", sig, theta)
    defect = float(np.max(np.abs(back - d) / np.maximum(1.0, np.abs(d)))) if d.size else 0.0
    sup_theta = float(np.max(np.linalg.norm(theta, axis=-1))) if d.size else 0.0
    dW = np.diff(S.meta["driver"].time_first(), axis=0)
    dt = case.grid.dt
    step = -np.sum(theta * dW, axis=-1) - 0.5 * np.sum(theta * theta, axis=-1) * dt
    logw = np.moveaxis(_pad_cumsum(step), 0, -1)
    violated = sup_theta > bound or defect > range_tol
    weight = GirsanovWeight(logw, np.moveaxis(theta, 0, 1), float(bound), sup_theta, defect,
                            bool(violated))
    if violated and refuse:
        why = (f"sup|theta|={sup_theta:.4g} exceeds bound {bound:.4g}" if sup_theta > bound
               else f"b1 - b leaves the range of sigma (defect {defect:.3g})")
        raise GirsanovHypothesisError(f"Girsanov hypothesis violated: {why}", weight)
    return weight


@dataclass
class GirsanovReport:
    weight: GirsanovWeight
    qv_beta: ConvergenceReport
    beta_T_mean: float
    beta_T_se: float
    reweighted_residual: float
    reweighted_se: float
    direct_residual: float | None = None
    direct_se: float | None = None
    detail: dict = field(default_factory=dict)

    @property
    def weight_normalized(self) -> bool:
        mean, se = self.weight.normalization()
        return abs(mean - 1.0) <= 3 * se

    @property
    def beta_centered(self) -> bool:
        return abs(self.beta_T_mean) <= 3 * self.beta_T_se

    @property
    def matches_direct(self) -> bool | None:
        if self.direct_residual is None:
            return None
        band = 3 * math.hypot(self.reweighted_se, self.direct_se)
        return abs(self.reweighted_residual - self.direct_residual) <= band

    @property
    def passed(self) -> bool:
        return bool(self.weight_normalized and self.beta_centered and self.qv_beta.passed
                    and self.matches_direct is not False)

    def summary_lines(self) -> list:
        out = [f"{k}={v}" for k, v in self.weight.summary().items()]
        out += [f"beta_T_mean={self.beta_T_mean:.17g}", f"beta_T_se={self.beta_T_se:.17g}",
                f"reweighted_residual={self.reweighted_residual:.17g}",
                f"reweighted_se={self.reweighted_se:.17g}"]
        if self.direct_residual is not None:
            out += [f"direct_residual={self.direct_residual:.17g}",
                    f"direct_se={self.direct_se:.17g}"]
        out.append(f"passed={self.passed}")
        return out


def representation_via_girsanov(case: RepresentationCase, bound: float, *,
                                direct: RepresentationCase | None = None,
                                qv_tolerance: float | None = None) -> GirsanovReport:
    """Check the representation under the measure removing ``b1 - b``.

    ``beta = W + sum theta dt`` should be Brownian under ``Q``: its
    realized QV is compared with ``s`` and its reweighted terminal mean
    with 0.  The residual with ``B~ = sum h dt`` and integrator ``sigma dbeta``
    is averaged with the weights and, if ``direct`` (a run with ``b1 = b``)
    is given, compared with that run's plain mean within 3 combined SE.
    """
    w = girsanov_reweight(case, bound)
    W = case.ensemble.meta["driver"]
    dt = case.grid.dt
    theta_tf = np.moveaxis(w.theta, 1, 0)
    beta_tf = W.time_first() + _pad_cumsum(theta_tf * dt)
    beta = from_time_first(W, beta_tf, kind="q-brownian")
    qv = quadratic_variation(beta, k=1).time_first()
    s = case.grid.points.reshape(-1, 1, 1)
    qv_dev = np.max(np.abs(qv - s), axis=(0, 2))
    qv_rep = deviation_report("qv(beta)", [dt], [qv_dev], tolerance=qv_tolerance,
                              require_monotone=False)
    wt = w.terminal
    bT = beta_tf[-1, :, 0]
    bmean, bse = ensemble_mean(wt * bT)

    # residual under Q: u(S) - u(S0) - sum <grad u, sigma dbeta> - sum h dt
    S = case.ensemble
    tf = S.time_first()
    t = _times_like(case.grid, tf)
    grad = along(case.u, S, "grad").time_first()[:-1]
    sig = np.broadcast_to(_coeff(case.prob.sigma, t[:-1], tf[:-1], case.elliptic),
                          tf[:-1].shape + (W.dim,))
    dbeta = np.diff(beta_tf, axis=0)
    mart = np.einsum("...i,...ij,...j->...", grad, sig, dbeta)
    h = np.broadcast_to(_coeff(case.prob.h, t[:-1], tf[:-1], case.elliptic), t[:-1].shape)
    uS = along(case.u, S, "u").time_first()[..., 0]
    Rq = uS - uS[0] - _pad_cumsum(mart) - _pad_cumsum(h * dt)
    sup = np.max(np.abs(Rq), axis=0)
    rmean, rse = ensemble_mean(wt * sup)
    rep = GirsanovReport(w, qv_rep, bmean, bse, rmean, rse,
                         detail={"pathwise_vs_P_residual": float(np.max(np.abs(Rq - _residual(case))))})
    if direct is not None:
        dsup = np.max(np.abs(_residual(direct)), axis=0)
        rep.direct_residual, rep.direct_se = ensemble_mean(dsup)
    return rep


# --------------------------------------------------------------- stopping


def stopped_remainder(case: RepresentationCase, rule: StoppingRule) -> RemainderProcess:
    """PDE remainder accumulated only over steps before the stopping index.

    The stopping index comes from ``rule.reference`` or from ``S``; the
    result equals the stopped unstopped remainder bitwise (adding exact
    zeros after ``k*``).
    """
    S = case.ensemble
    kstar = np.atleast_1d(stopping_index(S, rule))
    hdt, bv, _ = _step_terms(case)
    live = np.arange(hdt.shape[0])[:, None] < kstar[None, :]
    terms = np.where(live, hdt + bv, 0.0)
    B = from_time_first(S, _pad_cumsum(terms)[..., None], kind="stopped-pde-remainder",
                        stopped_at=kstar)
    return RemainderProcess(B, "pde-representation")


def stopped_defect_check(case: RepresentationCase, rule: StoppingRule, *,
                         tolerance: float = 0.02) -> ConvergenceReport:
    """Stopped PDE remainder against the stopped C^{0,1} defect remainder."""
    S = case.ensemble
    kstar = np.atleast_1d(stopping_index(S, rule))
    Bp = stopped_remainder(case, rule).trajectory.time_first()
    Bd = stop_at(remainder_B(case.u, WeakDirichletSplit.from_sde(S)).trajectory, kstar)
    dev = np.max(np.abs(Bp - Bd.time_first()), axis=(0, 2))
    return deviation_report("stopped-remainders", [case.grid.dt], [dev], tolerance=tolerance,
                            require_monotone=False)


# ---------------------------------------------------------------- elliptic


def elliptic_representation_residual(u: ScalarField, eprob: EllipticProblem, ensemble,
                                     *, mode: str = "both", tolerance: float = 0.02):
    """Residual of the elliptic representation in one or both source modes.

    ``"as-written"`` integrates ``h``; ``"consistent"`` integrates
    ``-(h + lam u)``, which is what Itô's formula gives when
    ``lam u + L0 u + h = 0``.  Returns ``{mode: ConvergenceReport}``.
    """
    case = RepresentationCase(u, eprob, ensemble, name=eprob.name)
    modes = {"both": ("as-written", "consistent")}.get(mode, (mode,))
    out = {}
    for m in modes:
        if m not in ("as-written", "consistent"):
            raise ConfigurationError(f"unknown elliptic mode {m!r}")
        R = _residual(case, "h" if m == "as-written" else "consistent")
        out[m] = _residual_report(case, R, tolerance, f"elliptic[{m}]")
    return out


# ------------------------------------------------------------ closedness


@dataclass
class ClosureReport:
    """Martingale probes for the limit and each member, plus stopped-value gaps."""

    probes: list
    limit_passed: bool
    member_flags: dict
    sup_gaps: list
    stopped_gaps: list
    stopped_se: list
    stopped_converges: bool | None

    @property
    def passed(self) -> bool:
        return bool(self.limit_passed and self.stopped_converges is not False)

    def rows(self):
        for p in self.probes:
            yield p


def _default_tests(M_tf, k1):
    x1 = M_tf[k1, :, 0]
    run_max = np.max(M_tf[: k1 + 1, :, 0], axis=0)
    return {"1": np.ones_like(x1), "sign": np.sign(x1), "tanh": np.tanh(x1),
            "cos(max)": np.cos(run_max)}


def _probe(M, pairs, tests):
    grid = M.grid
    tf = M.time_first()
    out = []
    for t1, t2 in pairs:
        k1, k2 = grid.index(t1), grid.index(t2)
        gs = (tests or _default_tests)(tf, k1)
        inc = tf[k2, :, 0] - tf[k1, :, 0]
        for gname, g in gs.items():
            mean, se = ensemble_mean(g * inc)
            out.append({"t1": t1, "t2": t2, "test": gname, "mean": mean, "se": se,
                        "passed": abs(mean) <= 3 * se})
    return out


def martingale_closure_check(members: Sequence[PathEnsemble], limit: PathEnsemble, *,
                             pairs=((0.0, 0.5), (0.25, 0.75), (0.5, 1.0)), tests=None,
                             level: float | None = None, stopped_members=None,
                             tolerance: float = 0.05) -> ClosureReport:
    """Statistical martingale probe of a u.c.p. limit.

    For each probe pair ``t1 < t2`` and bounded ``F_t1``-measurable ``g``
    the limit must satisfy ``|E[g (M(t2) - M(t1))]| <= 3 SE``.  Members are
    probed too and their flags reported (a drifted member failing is the
    probe's power).  With ``level`` the stopped terminal values
    ``X_n^{tau_n}(T)`` of ``stopped_members`` (default ``members``) are
    compared with ``X^tau(T)`` for the first exit of ``|X| >= level``.
    """
    probes = [dict(p, who="limit") for p in _probe(limit, pairs, tests)]
    limit_ok = all(p["passed"] for p in probes)
    flags = {}
    for i, m in enumerate(members):
        mp = _probe(m, pairs, tests)
        flags[i] = all(p["passed"] for p in mp)
        probes += [dict(p, who=f"member{i}") for p in mp]
    lim_tf = limit.time_first()
    sup_gaps = [ensemble_mean(np.max(np.abs(m.time_first() - lim_tf), axis=(0, 2)))[0]
                for m in members]
    stopped, ses, conv = [], [], None
    if level is not None:
        rule = StoppingRule("level-exit", level=level)
        ref = stop_at(limit, stopping_index(limit, rule)).time_first()[-1, :, 0]
        for m in (stopped_members if stopped_members is not None else members):
            val = stop_at(m, stopping_index(m, rule)).time_first()[-1, :, 0]
            mean, se = ensemble_mean(np.abs(val - ref))
            stopped.append(mean)
            ses.append(se)
        if len(stopped) >= 2:
            conv = bool(stopped[-1] <= tolerance and stopped[-1] <= stopped[0])
    return ClosureReport(probes, limit_ok, flags, sup_gaps, stopped, ses, conv)
