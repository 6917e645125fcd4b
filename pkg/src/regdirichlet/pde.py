"""
Finite differences for the backward Cauchy problem

    d_t u + <b, grad u> + 1/2 Tr(sigma^* hess u sigma) = h,    u(T, .) = phi

and the elliptic problem ``lam u + <b, grad u> + 1/2 Tr(...) + h = 0`` on a
box ``[-L, L]^n`` (``n <= 2``) with Dirichlet data on the box boundary.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import RegularGridInterpolator

from .fields import ScalarField
from .pathkit import ConfigurationError

__all__ = [
    "CauchyProblem",
    "EllipticProblem",
    "Resolution",
    "DiscreteField",
    "StrongSolutionSequence",
    "InstabilityError",
    "SingularSystemError",
    "apply_L0",
    "l0_residual",
    "solve_backward_cauchy",
    "solve_elliptic",
    "gaussian_mollify",
    "mollify_strong_sequence",
    "write_field",
    "const_sigma",
    "const_sigma_x",
    "elliptic_residual",
]

BLOWUP = 1e10


class InstabilityError(RuntimeError):
    pass


class SingularSystemError(RuntimeError):
    pass


def const_sigma(value=1.0, n=1, m=None):
    """Constant diffusion field ``sigma(t, x) = value`` (scalar or ``n x m`` matrix)."""
    mat = np.atleast_2d(np.asarray(value, dtype=float))
    if mat.size == 1:
        mat = mat.item() * np.eye(n, m or n)

    def sigma(t, x):
        return np.broadcast_to(mat, np.shape(x)[:-1] + mat.shape)
    sigma.constant = mat
    return sigma


def zero_drift(t, x):
    return np.zeros(np.shape(x))


def zero_source(t, x):
    return np.zeros(np.shape(x)[:-1])


def const_sigma_x(value=1.0, n=1):
    inner = const_sigma(value, n)

    def sigma(x):
        return inner(None, x)
    sigma.constant = inner.constant
    return sigma


def _zero_x(x):
    return np.zeros(np.shape(x)[:-1])


def _zero_drift_x(x):
    return np.zeros(np.shape(x))


@dataclass
class CauchyProblem:
    """Coefficients of the backward problem.

    ``b(t, x) -> (..., n)``, ``sigma(t, x) -> (..., n, m)``,
    ``h(t, x) -> (...)``, ``phi(x) -> (...)``.  ``boundary(t, x)`` overrides
    the default artificial boundary data ``phi(x) - (T - t) h(T, x)``.
    """

    b: Callable = zero_drift
    sigma: Callable = field(default_factory=const_sigma)
    h: Callable = zero_source
    phi: Callable = lambda x: np.zeros(np.shape(x)[:-1])  # noqa: E731
    T: float = 1.0
    n: int = 1
    time_homogeneous: bool = False
    boundary: Callable | None = None
    name: str = ""

    def boundary_values(self, t, x):
        if self.boundary is not None:
            return np.asarray(self.boundary(t, x), dtype=float)
        # zero-order Taylor in time from u(T) = phi, u_t ~ h
        return np.asarray(self.phi(x), dtype=float) - (self.T - t) * np.asarray(
            self.h(self.T, x), dtype=float)


@dataclass
class EllipticProblem:
    """Time-homogeneous coefficients ``b(x)``, ``sigma(x)``, ``h(x)``."""

    lam: float
    b: Callable = _zero_drift_x
    sigma: Callable = field(default_factory=const_sigma_x)
    h: Callable = _zero_x
    n: int = 1
    boundary: Callable | None = None
    name: str = ""

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigurationError("elliptic problem needs lambda > 0")
        # time-lifted coefficients for path generation; the same objects are
        # checked by identity when pairing paths with this problem
        sigma, b = self.sigma, self.b
        self.sde_sigma = lambda s, x: sigma(x)
        self.sde_b = lambda s, x: b(x)
        if hasattr(sigma, "constant"):
            self.sde_sigma.constant = sigma.constant

    def boundary_values(self, x):
        if self.boundary is not None:
            return np.asarray(self.boundary(x), dtype=float)
        return -np.asarray(self.h(x), dtype=float) / self.lam


@dataclass(frozen=True)
class Resolution:
    L: float = 8.0
    nx: int = 401
    nt: int = 1000

    def __post_init__(self):
        if not self.L > 0 or self.nx < 5 or self.nt < 1:
            raise ConfigurationError(f"bad resolution {self}")

    @property
    def dx(self) -> float:
        return 2 * self.L / (self.nx - 1)

    def axis(self) -> np.ndarray:
        return np.linspace(-self.L, self.L, self.nx)


def _nodes(axes):
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack(mesh, axis=-1)


def _second_diff(v, dx, axis):
    v = np.moveaxis(v, axis, -1)
    out = np.empty_like(v)
    out[..., 1:-1] = (v[..., 2:] - 2 * v[..., 1:-1] + v[..., :-2]) / dx**2
    out[..., 0] = (2 * v[..., 0] - 5 * v[..., 1] + 4 * v[..., 2] - v[..., 3]) / dx**2
    out[..., -1] = (2 * v[..., -1] - 5 * v[..., -2] + 4 * v[..., -3] - v[..., -4]) / dx**2
    return np.moveaxis(out, -1, axis)


@dataclass
class DiscreteField:
    """Grid values of a solution with derived difference tables.

    ``values`` has shape ``(nt + 1, nx[, nx])`` for a parabolic field (time
    ascending) and ``(nx[, nx])`` for an elliptic one (``times is None``).
    Gradients are central in the interior and one-sided on the boundary.
    """

    axes: tuple
    times: np.ndarray | None
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError("discrete field has non-finite values")
        self._grad = None
        self._hess = None

    @property
    def n(self) -> int:
        return len(self.axes)

    @property
    def dx(self) -> float:
        return float(self.axes[0][1] - self.axes[0][0])

    @property
    def _off(self):
        return 0 if self.times is None else 1

    def gradient(self) -> np.ndarray:
        if self._grad is None:
            g = [np.gradient(self.values, self.dx, axis=self._off + i) for i in range(self.n)]
            self._grad = np.stack(g, axis=-1)
        return self._grad

    def hessian(self) -> np.ndarray:
        if self._hess is None:
            n, off = self.n, self._off
            H = np.empty(self.values.shape + (n, n))
            for i in range(n):
                H[..., i, i] = _second_diff(self.values, self.dx, off + i)
                for j in range(i + 1, n):
                    mixed = np.gradient(self.gradient()[..., i], self.dx, axis=off + j)
                    H[..., i, j] = H[..., j, i] = mixed
            self._hess = H
        return self._hess

    def time_derivative(self) -> np.ndarray:
        if self.times is None:
            raise ConfigurationError("elliptic field has no time axis")
        return np.gradient(self.values, self.times, axis=0)

    def _interp(self, table):
        pts = self.axes if self.times is None else (self.times,) + tuple(self.axes)
        return RegularGridInterpolator(pts, table, method="linear", bounds_error=True)

    def as_field(self, name="discrete") -> ScalarField:
        """Piecewise-linear interpolant of ``u`` and of its gradient table."""
        iu = self._interp(self.values)
        ig = [self._interp(self.gradient()[..., i]) for i in range(self.n)]
        elliptic = self.times is None

        def pts(t, x):
            x = np.asarray(x, dtype=float)
            if elliptic:
                q = x
            else:
                q = np.concatenate([np.broadcast_to(np.asarray(t, dtype=float)[..., None],
                                                    x.shape[:-1] + (1,)), x], axis=-1)
            lo = np.array(([0.0] if not elliptic else []) + [-self.axes[0][-1]] * self.n)
            hi = np.array(([self.times[-1]] if not elliptic else []) + [self.axes[0][-1]] * self.n)
            if np.any(q < lo - 1e-12) or np.any(q > hi + 1e-12):
                raise ConfigurationError("evaluation point outside the truncated domain")
            return np.clip(q, lo, hi)

        def u(t, x):
            return iu(pts(t, x))

        def grad(t, x):
            q = pts(t, x)
            return np.stack([g(q) for g in ig], axis=-1)
        return ScalarField(u, grad, name=name)


def _diffusion(sigma_vals):
    return np.einsum("...ik,...jk->...ij", sigma_vals, sigma_vals)


def apply_L0(u, prob: CauchyProblem, t, x):
    """``d_t u + <b, grad u> + 1/2 Tr(sigma^* hess u sigma)`` at ``(t, x)``.

    ``u`` is a :class:`ScalarField` with ``dt_u`` and ``hess_x``, or a
    :class:`DiscreteField` whose difference tables are interpolated.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape[-1] != prob.n:
        x = x[..., None]
    t = np.asarray(t, dtype=float)
    if isinstance(u, DiscreteField):
        box = u.axes[0][-1]
        if np.any(np.abs(x) > box + 1e-12) or np.any(t < u.times[0]) or np.any(t > u.times[-1]):
            raise ConfigurationError("(t, x) outside the truncated domain")
        ut = u._interp(u.time_derivative())
        q = np.concatenate([np.broadcast_to(t[..., None], x.shape[:-1] + (1,)), x], axis=-1)
        dtu = ut(q)
        grad = np.stack([u._interp(u.gradient()[..., i])(q) for i in range(u.n)], axis=-1)
        H = np.empty(x.shape[:-1] + (u.n, u.n))
        for i in range(u.n):
            for j in range(u.n):
                H[..., i, j] = u._interp(u.hessian()[..., i, j])(q)
    else:
        if u.dt_u is None or u.hess_x is None:
            raise ConfigurationError("apply_L0 needs dt_u and hess_x")
        dtu, grad, H = u.dt_u(t, x), u.grad_x(t, x), u.hess_x(t, x)
    a = _diffusion(np.asarray(prob.sigma(t, x), dtype=float))
    b = np.asarray(prob.b(t, x), dtype=float)
    return dtu + np.sum(b * grad, axis=-1) + 0.5 * np.sum(a * H, axis=(-2, -1))


def l0_residual(u: DiscreteField, prob: CauchyProblem, *, inner: float | None = None):
    """Sup-norm of ``L0 u - h`` on interior nodes at interior times.

    Uses the nodal difference tables directly.  ``inner`` restricts the
    spatial sup to ``|x|_inf <= inner``.
    """
    nodes = _nodes(u.axes)
    tt = u.times[1:-1]
    dtu = u.time_derivative()[1:-1]
    grad = u.gradient()[1:-1]
    H = u.hessian()[1:-1]
    T = tt.reshape((-1,) + (1,) * u.n)
    X = np.broadcast_to(nodes, tt.shape + nodes.shape)
    Tb = np.broadcast_to(T, X.shape[:-1])
    a = _diffusion(np.asarray(prob.sigma(Tb, X), dtype=float))
    b = np.asarray(prob.b(Tb, X), dtype=float)
    res = dtu + np.sum(b * grad, axis=-1) + 0.5 * np.sum(a * H, axis=(-2, -1)) - prob.h(Tb, X)
    interior = (slice(None),) + (slice(1, -1),) * u.n
    res = res[interior]
    if inner is not None:
        mask = np.all(np.abs(nodes[(slice(1, -1),) * u.n]) <= inner + 1e-12, axis=-1)
        res = res[:, mask]
    return float(np.max(np.abs(res)))


# ------------------------------------------------------------- assembly


def _operator(axes, b_vals, a_vals):
    """Sparse ``L_h = <b, grad> + 1/2 Tr(a hess)`` with zero boundary rows."""
    n = len(axes)
    shape = tuple(len(ax) for ax in axes)
    dx = axes[0][1] - axes[0][0]
    size = int(np.prod(shape))
    idx = np.arange(size).reshape(shape)
    interior = (slice(1, -1),) * n
    rows, cols, data = [], [], []

    def add(offset, coef):
        src = idx[interior].ravel()
        shifted = idx[tuple(slice(1 + o, len(ax) - 1 + o) for o, ax in zip(offset, axes))].ravel()
        rows.append(src)
        cols.append(shifted)
        data.append(coef[interior].ravel())

    centre = np.zeros(shape)
    for i in range(n):
        e = [0] * n
        e[i] = 1
        up = b_vals[..., i] / (2 * dx) + 0.5 * a_vals[..., i, i] / dx**2
        down = -b_vals[..., i] / (2 * dx) + 0.5 * a_vals[..., i, i] / dx**2
        add(tuple(e), up)
        add(tuple(-v for v in e), down)
        centre -= a_vals[..., i, i] / dx**2
    if n == 2:
        c = a_vals[..., 0, 1] / (4 * dx * dx)
        for o, sgn in (((1, 1), 1), ((-1, -1), 1), ((1, -1), -1), ((-1, 1), -1)):
            add(o, sgn * c)
    add((0,) * n, centre)
    return sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(size, size))


def _boundary_mask(shape):
    mask = np.ones(shape, dtype=bool)
    mask[(slice(1, -1),) * len(shape)] = False
    return mask.ravel()


def solve_backward_cauchy(prob: CauchyProblem, disc: Resolution = Resolution(),
                          theta: float = 0.5) -> DiscreteField:
    """Theta-scheme in time, central differences in space.

    Marches from ``u(T) = phi`` down to ``t = 0``; ``theta = 1/2`` is the
    Crank–Nicolson weighting, ``theta = 1`` fully implicit.
    """
    if prob.n > 2:
        raise ConfigurationError("finite-difference solver supports n <= 2")
    if not 0.0 <= theta <= 1.0:
        raise ConfigurationError("theta must lie in [0, 1]")
    axes = (disc.axis(),) * prob.n
    nodes = _nodes(axes)
    shape = nodes.shape[:-1]
    size = int(np.prod(shape))
    flat = nodes.reshape(size, prob.n)
    bmask = _boundary_mask(shape)
    times = np.linspace(0.0, prob.T, disc.nt + 1)
    dt = prob.T / disc.nt
    eye = sp.identity(size, format="csr")
    keep = sp.diags((~bmask).astype(float))
    U = np.empty((disc.nt + 1,) + shape)
    u = np.asarray(prob.phi(flat), dtype=float).reshape(size).copy()
    U[-1] = u.reshape(shape)

    def coeffs(t):
        return (np.asarray(prob.b(t, nodes), dtype=float),
                _diffusion(np.asarray(prob.sigma(t, nodes), dtype=float)))

    def op(t):
        return _operator(axes, *coeffs(t))

    def source(t):
        return np.broadcast_to(np.asarray(prob.h(t, flat), dtype=float), (size,))

    if prob.boundary is None:
        # default data is affine in t, so two evaluations suffice
        phi_b = np.asarray(prob.phi(flat[bmask]), dtype=float)
        h_b = np.asarray(prob.h(prob.T, flat[bmask]), dtype=float)
        bc = lambda t: phi_b - (prob.T - t) * h_b  # noqa: E731
    else:
        bc = lambda t: prob.boundary_values(t, flat[bmask])  # noqa: E731
    cached = None
    L_next = op(times[-1])
    for k in range(disc.nt - 1, -1, -1):
        t = times[k]
        L_now = L_next if prob.time_homogeneous else op(t)
        rhs = u + (1 - theta) * dt * (L_next @ u) - dt * (theta * source(t)
                                                          + (1 - theta) * source(times[k + 1]))
        rhs[bmask] = bc(t)
        if theta == 0:
            u = rhs
        else:
            if cached is None or not prob.time_homogeneous:
                A = (eye - theta * dt * (keep @ L_now)).tocsc()
                cached = spla.splu(A)
            u = cached.solve(rhs)
        if not np.all(np.isfinite(u)) or np.max(np.abs(u)) > BLOWUP:
            a_max = float(np.max(coeffs(t)[1]))
            raise InstabilityError(
                f"solution blew up at t={t:.6g} (theta={theta}, dt={dt:.3g}, dx={disc.dx:.3g}); "
                f"explicit steps need dt <= dx^2/a_max = {disc.dx**2 / max(a_max, 1e-300):.3g}")
        U[k] = u.reshape(shape)
        L_next = L_now
    meta = {"box": disc.L, "nx": disc.nx, "nt": disc.nt, "scheme": f"theta={theta}",
            "problem": prob.name}
    return DiscreteField(axes, times, U, meta)


def solve_elliptic(prob: EllipticProblem, disc: Resolution = Resolution()) -> DiscreteField:
    """Solve ``lam u + L_h u + h = 0`` on interior nodes, Dirichlet data on the boundary."""
    if prob.n > 2:
        raise ConfigurationError("finite-difference solver supports n <= 2")
    axes = (disc.axis(),) * prob.n
    nodes = _nodes(axes)
    shape = nodes.shape[:-1]
    size = int(np.prod(shape))
    flat = nodes.reshape(size, prob.n)
    bmask = _boundary_mask(shape)
    b = np.asarray(prob.b(nodes), dtype=float)
    a = _diffusion(np.asarray(prob.sigma(nodes), dtype=float))
    Lh = _operator(axes, b, a)
    interior = sp.diags((~bmask).astype(float))
    A = (interior @ (prob.lam * sp.identity(size) + Lh) + sp.diags(bmask.astype(float))).tocsc()
    rhs = -np.asarray(prob.h(flat), dtype=float).reshape(size).copy()
    rhs[bmask] = prob.boundary_values(flat[bmask])
    try:
        u = spla.splu(A).solve(rhs)
    except RuntimeError as exc:
        raise SingularSystemError(f"elliptic system is singular: {exc}") from exc
    resid = np.linalg.norm(A @ u - rhs) / max(np.linalg.norm(rhs), 1e-300)
    if not np.all(np.isfinite(u)) or resid > 1e-8:
        raise SingularSystemError(f"elliptic system is numerically singular (residual {resid:.2e})")
    meta = {"box": disc.L, "nx": disc.nx, "scheme": "elliptic", "lambda": prob.lam,
            "problem": prob.name}
    return DiscreteField(axes, None, u.reshape(shape), meta)


def elliptic_residual(u: DiscreteField, prob: EllipticProblem, *, inner=None) -> float:
    """Sup-norm of ``lam u + L0 u + h`` on interior nodes from the difference tables."""
    nodes = _nodes(u.axes)
    a = _diffusion(np.asarray(prob.sigma(nodes), dtype=float))
    b = np.asarray(prob.b(nodes), dtype=float)
    res = (prob.lam * u.values + np.sum(b * u.gradient(), axis=-1)
           + 0.5 * np.sum(a * u.hessian(), axis=(-2, -1)) + prob.h(nodes))
    sl = (slice(1, -1),) * u.n
    res, inner_nodes = res[sl], nodes[sl]
    if inner is not None:
        res = res[np.all(np.abs(inner_nodes) <= inner + 1e-12, axis=-1)]
    return float(np.max(np.abs(res)))


# -------------------------------------------------- strong solutions


def gaussian_mollify(fn: Callable, scale: float, n: int = 1, *, nodes: int = 201,
                     timed: bool = False) -> Callable:
    """Spatial convolution with a Gaussian of standard deviation ``scale``.

    The kernel is truncated at 5 standard deviations and evaluated by a
    normalized equispaced rule (one axis at a time for ``n = 2``).
    """
    if fn is zero_source or fn is _zero_x:
        return fn
    y = np.linspace(-5 * scale, 5 * scale, nodes)
    w = np.exp(-0.5 * (y / scale) ** 2)
    w /= w.sum()

    def shift(x, axis, dy):
        x = np.array(x, dtype=float, copy=True)
        x[..., axis] -= dy
        return x

    def conv(call, x):
        x = np.asarray(x, dtype=float)
        if n == 1:
            return sum(wk * call(shift(x, 0, yk)) for wk, yk in zip(w, y))
        return sum(wi * wj * call(shift(shift(x, 0, yi), 1, yj))
                   for wi, yi in zip(w, y) for wj, yj in zip(w, y))

    if timed:
        return lambda t, x: conv(lambda z: np.asarray(fn(t, z), dtype=float), x)
    return lambda x: conv(lambda z: np.asarray(fn(z), dtype=float), x)


@dataclass
class StrongSolutionSequence:
    """Mollified strict solutions ``u_n`` with their data and convergence log.

    ``log`` holds per-``n`` sup-norm gaps on the truncated domain
    ``|x|_inf <= inner``: ``u`` (consecutive ``|u_n - u_{n-1}|``), ``h``
    (``|h_n - h|``), ``phi`` (``|phi_n - phi|``) and, when requested,
    ``grad`` (consecutive gradient gaps).
    """

    entries: list
    limits: tuple
    scales: list
    log: dict
    inner: float

    @property
    def converges(self) -> bool | None:
        """Gaps non-increasing beyond ``n = 2``; ``None`` when too short to tell."""
        gaps = [g for g in self.log["u"] if np.isfinite(g)]
        if len(gaps) < 2:
            return None
        tail = gaps[1:] if len(gaps) > 2 else gaps
        return bool(np.all(np.diff(tail) <= 1e-12))

    @property
    def final(self) -> DiscreteField:
        return self.entries[-1][0]


def mollify_strong_sequence(prob: CauchyProblem, n_max: int, disc: Resolution = Resolution(),
                            *, theta: float = 0.5, inner: float | None = None,
                            gradients: bool = True, scales=None) -> StrongSolutionSequence:
    """Solve with data mollified at scale ``1/n`` for ``n = 1..n_max``."""
    if n_max < 1:
        raise ConfigurationError("n_max must be >= 1")
    inner = disc.L / 2 if inner is None else inner
    scales = list(scales) if scales is not None else [1.0 / n for n in range(1, n_max + 1)]
    axes = (disc.axis(),) * prob.n
    nodes = _nodes(axes)
    mask = np.all(np.abs(nodes) <= inner + 1e-12, axis=-1)
    times = np.linspace(0.0, prob.T, disc.nt + 1)
    t_probe = times[:: max(1, disc.nt // 20)]
    phi_vals = np.asarray(prob.phi(nodes), dtype=float)
    entries, log = [], {"u": [], "h": [], "phi": [], "grad": []}
    prev = None
    for scale in scales:
        phi_n = gaussian_mollify(prob.phi, scale, prob.n)
        h_n = gaussian_mollify(prob.h, scale, prob.n, timed=True)
        sub = replace(prob, phi=phi_n, h=h_n, boundary=None, name=f"{prob.name}[1/{1 / scale:g}]")
        u_n = solve_backward_cauchy(sub, disc, theta)
        u_n.meta["mollification_scale"] = scale
        entries.append((u_n, h_n, phi_n))
        log["phi"].append(float(np.max(np.abs(phi_n(nodes) - phi_vals)[mask])))
        log["h"].append(max(float(np.max(np.abs(np.asarray(h_n(t, nodes)) - prob.h(t, nodes))[mask]))
                            for t in t_probe))
        if prev is None:
            log["u"].append(math.nan)
            log["grad"].append(math.nan)
        else:
            log["u"].append(float(np.max(np.abs(u_n.values - prev.values)[:, mask])))
            if gradients:
                gap = np.abs(u_n.gradient() - prev.gradient()).max(axis=-1)
                log["grad"].append(float(np.max(gap[:, mask])))
        prev = u_n
    return StrongSolutionSequence(entries, (None, prob.h, prob.phi), scales, log, inner)


# ----------------------------------------------------------------- I/O


def _atomic_write(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fp:
        fp.write(text)
    os.replace(tmp, path)


def write_field(u: DiscreteField, directory, *, slices=None) -> list:
    """One CSV per time slice (``x1,...,xn,u,du_dx1,...``) plus ``field.meta``."""
    import io

    os.makedirs(directory, exist_ok=True)
    nodes = _nodes(u.axes).reshape(-1, u.n)
    grads = u.gradient()
    written = []
    if u.times is None:
        slices = [None]
    elif slices is None:
        slices = [0, len(u.times) - 1]
    for k in slices:
        vals = (u.values if k is None else u.values[k]).ravel()
        g = (grads if k is None else grads[k]).reshape(-1, u.n)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"x{i + 1}" for i in range(u.n)] + ["u"]
                        + [f"du_dx{i + 1}" for i in range(u.n)])
        for x, v, gg in zip(nodes, vals, g):
            writer.writerow([f"{c:.17g}" for c in x] + [f"{v:.17g}"] + [f"{c:.17g}" for c in gg])
        name = "field.csv" if k is None else f"slice_{k:06d}.csv"
        _atomic_write(os.path.join(directory, name), buf.getvalue())
        written.append(name)
    meta = dict(u.meta)
    if u.times is not None:
        meta["slice_times"] = ",".join(f"{u.times[k]:.17g}" for k in slices)
    _atomic_write(os.path.join(directory, "field.meta"),
                  "".join(f"{k}={v}\n" for k, v in sorted(meta.items())))
    return written
