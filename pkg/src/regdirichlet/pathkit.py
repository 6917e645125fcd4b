"""
Time grids, random streams and path generators.

Paths are stored time-first: a :class:`SamplePath` holds ``values`` of shape
``(steps + 1, *comp)`` and a :class:`PathEnsemble` holds ``(n_paths, steps + 1,
*comp)``, where ``comp`` is ``(dim,)`` for vector processes and ``(m, n)`` for
matrix-valued ones.  Every path is constant beyond the end of its grid.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ConfigurationError",
    "NonFiniteCoefficientError",
    "TimeGrid",
    "SamplePath",
    "PathEnsemble",
    "StoppingRule",
    "make_grid",
    "stream",
    "gen_brownian",
    "brownian_ensemble",
    "gen_sde_euler",
    "gen_bounded_variation",
    "ExponentialKernel",
    "SeparableKernel",
    "gen_convolution_wd",
    "gen_independent",
    "stopping_index",
    "stop_path",
    "stop_at",
    "path_functional",
    "from_time_first",
    "stack_paths",
    "write_path_csv",
    "read_path_csv",
]

FILTRATION = 0
INDEPENDENT = 1
_NAMESPACES = {"filtration": FILTRATION, "independent": INDEPENDENT}


class ConfigurationError(ValueError):
    """Invalid grid, schedule or generator parameters."""


class NonFiniteCoefficientError(ValueError):
    """A drift or diffusion evaluation produced NaN or Inf."""

    def __init__(self, message, paths=(), step=None):
        super().__init__(message)
        self.paths = tuple(paths)
        self.step = step


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    steps: int

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.steps

    @property
    def points(self) -> np.ndarray:
        return self.t0 + np.arange(self.steps + 1) * self.dt

    def __len__(self):
        return self.steps + 1

    def index(self, s: float) -> int:
        """Largest grid index with ``s_k <= s`` (clipped to the grid)."""
        k = math.floor((s - self.t0) / self.dt + 1e-9)
        return min(max(k, 0), self.steps)


def make_grid(t0: float, T: float, steps: int) -> TimeGrid:
    """Uniform grid ``t0 = s_0 < ... < s_steps = T``."""
    if not (math.isfinite(t0) and math.isfinite(T)):
        raise ConfigurationError(f"grid bounds must be finite, got t0={t0}, T={T}")
    if t0 < 0 or not T > t0:
        raise ConfigurationError(f"need 0 <= t0 < T, got t0={t0}, T={T}")
    if int(steps) != steps or steps < 2:
        raise ConfigurationError(f"steps must be an integer >= 2, got {steps}")
    return TimeGrid(float(t0), float(T), int(steps))


@dataclass
class SamplePath:
    """One trajectory on a grid, extended by constancy beyond ``T``."""

    grid: TimeGrid
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.shape[0] != self.grid.steps + 1:
            raise ConfigurationError(
                f"path has {self.values.shape[0]} samples, grid needs {self.grid.steps + 1}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError("path values must be finite")

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def comp_shape(self) -> tuple:
        return self.values.shape[1:]

    def time_first(self) -> np.ndarray:
        return self.values

    def evaluate(self, s: float) -> np.ndarray:
        """Value at time ``s``; left-grid-point value inside, ``values[-1]`` beyond ``T``."""
        if s >= self.grid.T:
            return self.values[-1]
        return self.values[self.grid.index(s)]

    def with_values(self, values, **meta) -> "SamplePath":
        return SamplePath(self.grid, values, dict(meta))


@dataclass
class PathEnsemble:
    """Paths sharing one grid; path ``i`` depends only on its own stream ``seeds[i]``."""

    grid: TimeGrid
    values: np.ndarray
    seeds: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 2:
            self.values = self.values[:, :, None]
        if self.values.shape[1] != self.grid.steps + 1:
            raise ConfigurationError(
                f"ensemble has {self.values.shape[1]} samples per path, grid needs "
                f"{self.grid.steps + 1}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError("ensemble values must be finite")
        self.seeds = tuple(self.seeds)

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    @property
    def comp_shape(self) -> tuple:
        return self.values.shape[2:]

    def __len__(self):
        return self.n_paths

    def time_first(self) -> np.ndarray:
        return np.moveaxis(self.values, 0, 1)

    def path(self, i: int) -> SamplePath:
        return SamplePath(self.grid, self.values[i], {"seed": self.seeds[i] if self.seeds else None})

    def with_values(self, values, **meta) -> "PathEnsemble":
        return PathEnsemble(self.grid, values, self.seeds, dict(meta))

    @classmethod
    def broadcast(cls, path: SamplePath, n_paths: int) -> "PathEnsemble":
        values = np.broadcast_to(path.values, (n_paths,) + path.values.shape).copy()
        return cls(path.grid, values, (), dict(path.meta))


def from_time_first(like, arr: np.ndarray, **meta):
    """Wrap a time-first array the same way as ``like`` (path or ensemble)."""
    if isinstance(like, PathEnsemble):
        return PathEnsemble(like.grid, np.moveaxis(arr, 1, 0), like.seeds, meta)
    return SamplePath(like.grid, arr, meta)


# ---------------------------------------------------------------- streams


def stream(seed: int, index: int = 0, namespace: str = "filtration") -> np.random.Generator:
    """Counter-based (Philox) generator for stream ``(namespace, seed, index)``.

    Independent-of-the-filtration processes draw from the ``"independent"``
    namespace, which never collides with filtration drivers.
    """
    ns = _NAMESPACES[namespace]
    ss = np.random.SeedSequence([ns, int(seed), int(index)])
    return np.random.Generator(np.random.Philox(ss))


def _brownian_values(grid: TimeGrid, dim: int, seed: int, index: int, namespace: str):
    rng = stream(seed, index, namespace)
    dW = rng.standard_normal((grid.steps, dim)) * math.sqrt(grid.dt)
    out = np.zeros((grid.steps + 1, dim))
    np.cumsum(dW, axis=0, out=out[1:])
    return out


def gen_brownian(grid: TimeGrid, dim: int = 1, seed: int = 0, *, index: int = 0,
                 namespace: str = "filtration") -> SamplePath:
    """Brownian motion started at 0 with componentwise increment variance ``dt``."""
    if dim < 1:
        raise ConfigurationError("dim must be >= 1")
    values = _brownian_values(grid, dim, seed, index, namespace)
    return SamplePath(grid, values, {"kind": "brownian", "namespace": namespace,
                                     "seed": (seed, index)})


def brownian_ensemble(grid: TimeGrid, dim: int, n_paths: int, seed: int = 0, *,
                      namespace: str = "filtration", first_index: int = 0,
                      workers: int = 1) -> PathEnsemble:
    """``n_paths`` Brownian paths, path ``i`` drawn from stream ``first_index + i``."""
    if dim < 1 or n_paths < 1:
        raise ConfigurationError("dim and n_paths must be >= 1")
    indices = range(first_index, first_index + n_paths)
    make = lambda i: _brownian_values(grid, dim, seed, i, namespace)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            paths = list(pool.map(make, indices))
    else:
        paths = [make(i) for i in indices]
    seeds = tuple((namespace, seed, i) for i in indices)
    return PathEnsemble(grid, np.stack(paths), seeds,
                        {"kind": "brownian", "namespace": namespace})


# ------------------------------------------------------------------ SDEs


def _matvec(a: np.ndarray, v: np.ndarray) -> np.ndarray:
    # fixed left-to-right summation over the small inner axis, so each path's
    # result does not depend on how many paths are batched together
    out = a[..., 0] * v[..., None, 0]
    for j in range(1, v.shape[-1]):
        out = out + a[..., j] * v[..., None, j]
    return out


def path_functional(fn: Callable) -> Callable:
    """Mark a drift as history dependent: it is called as ``fn(s, prefix)``.

    ``prefix`` is a read-only array ``(k + 1, n_paths, n)`` of the states
    visited up to and including the current step.
    """
    fn.path_dependent = True
    return fn


def _euler_chunk(grid, b1, sigma, x0, dW):
    # dW: (n_paths, steps, m)
    n_paths, steps, _ = dW.shape
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    n = x0.size
    tf = np.empty((steps + 1, n_paths, n))
    tf[0] = x0
    drift = np.empty((n_paths, steps, n))
    noise = np.empty((n_paths, steps, n))
    s = grid.points
    history = getattr(b1, "path_dependent", False)
    for k in range(steps):
        x = tf[k]
        if history:
            prefix = tf[: k + 1]
            prefix.flags.writeable = False
            bk = np.asarray(b1(s[k], prefix), dtype=float)
        else:
            bk = np.asarray(b1(s[k], x), dtype=float)
        bk = np.broadcast_to(bk, (n_paths, n))
        sk = np.broadcast_to(np.asarray(sigma(s[k], x), dtype=float), (n_paths, n, dW.shape[2]))
        bad = ~(np.all(np.isfinite(bk), axis=-1) & np.all(np.isfinite(sk), axis=(-2, -1)))
        if bad.any():
            raise NonFiniteCoefficientError(
                f"non-finite drift/diffusion at step {k} (s={s[k]:.6g}) on "
                f"{int(bad.sum())} path(s)", np.flatnonzero(bad), k)
        drift[:, k] = bk * grid.dt
        noise[:, k] = _matvec(sk, dW[:, k])
        tf[k + 1] = x + drift[:, k] + noise[:, k]
    return np.moveaxis(tf, 0, 1), drift, noise


def gen_sde_euler(grid: TimeGrid, b1: Callable, sigma: Callable, x0, driver, *,
                  workers: int = 1):
    """Euler–Maruyama solution of ``dS = b1(s, S) ds + sigma(s, S) dW``.

    Parameters
    ----------
    grid : TimeGrid
    b1 : callable
        ``b1(s, x) -> (n_paths, n)`` for ``x`` of shape ``(n_paths, n)``.  A
        drift wrapped with :func:`path_functional` receives the path prefix.
    sigma : callable
        ``sigma(s, x) -> (n_paths, n, m)``.
    x0 : array_like
        Initial point, shape ``(n,)``.
    driver : SamplePath or PathEnsemble
        Brownian driver of dimension ``m``.
    workers : int
        Paths are split into contiguous chunks integrated concurrently; the
        output does not depend on this number.

    Returns
    -------
    SamplePath or PathEnsemble
        Same kind as ``driver``.  ``meta`` carries the per-step drift
        increments ``b1 dt`` (``"drift"``), noise increments ``sigma dW``
        (``"noise"``), the ``sigma`` object, ``b1`` and the driver.
    """
    if driver.grid != grid:
        raise ConfigurationError("driver grid differs from the SDE grid")
    single = isinstance(driver, SamplePath)
    dW = np.diff(driver.values, axis=-2)
    if single:
        dW = dW[None]
    n_paths = dW.shape[0]
    if workers > 1 and n_paths > 1:
        bounds = np.linspace(0, n_paths, min(workers, n_paths) + 1).astype(int)
        chunks = [dW[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda c: _euler_chunk(grid, b1, sigma, x0, c), chunks))
        values, drift, noise = (np.concatenate(p) for p in zip(*parts))
    else:
        values, drift, noise = _euler_chunk(grid, b1, sigma, x0, dW)
    meta = {"kind": "sde", "sigma": sigma, "b1": b1, "driver": driver,
            "x0": np.asarray(x0, dtype=float).reshape(-1)}
    if single:
        return SamplePath(grid, values[0], dict(meta, drift=drift[0], noise=noise[0]))
    return PathEnsemble(grid, values, driver.seeds, dict(meta, drift=drift, noise=noise))


# ------------------------------------------------------ other processes


def gen_bounded_variation(grid: TimeGrid, integrand: Callable) -> SamplePath:
    """``V(s_k) = sum_{j<k} f(s_j) dt``, a left Riemann sum started at 0."""
    s = grid.points[:-1]
    f = np.asarray(integrand(s), dtype=float)
    if f.ndim == 0:
        f = np.full((s.size, 1), float(f))
    elif f.ndim == 1:
        f = f[:, None]
    out = np.zeros((grid.steps + 1, f.shape[1]))
    np.cumsum(f * grid.dt, axis=0, out=out[1:])
    return SamplePath(grid, out, {"kind": "bounded-variation"})


@dataclass(frozen=True)
class ExponentialKernel:
    """``G(s, r) = exp(-rate (s - r))``."""

    rate: float = 1.0

    def __call__(self, s, r):
        return np.exp(-self.rate * (np.asarray(s) - np.asarray(r)))


@dataclass(frozen=True)
class SeparableKernel:
    """``G(s, r) = f(s) g(r)``."""

    f: Callable
    g: Callable

    def __call__(self, s, r):
        return np.asarray(self.f(s)) * np.asarray(self.g(r))


def gen_convolution_wd(grid: TimeGrid, kernel: Callable, driver):
    """Discrete convolution integral ``X(s_k) = sum_{j<k} G(s_k, s_j) dM_j``.

    Exponential and separable kernels use an O(steps) recursion; any other
    callable ``G(s, r)`` is summed directly row by row, O(steps^2) per path.
    """
    if driver.grid != grid:
        raise ConfigurationError("driver grid differs from the convolution grid")
    dM = np.diff(driver.values, axis=-2)
    single = dM.ndim == 2
    if single:
        dM = dM[None]
    s = grid.points
    out = np.zeros((dM.shape[0], grid.steps + 1, dM.shape[2]))
    if isinstance(kernel, ExponentialKernel):
        decay = math.exp(-kernel.rate * grid.dt)
        acc = np.zeros(dM.shape[::2])
        for k in range(grid.steps):
            acc = decay * (acc + dM[:, k])
            out[:, k + 1] = acc
    elif isinstance(kernel, SeparableKernel):
        g = np.broadcast_to(np.asarray(kernel.g(s[:-1]), dtype=float), (grid.steps,))
        f = np.broadcast_to(np.asarray(kernel.f(s), dtype=float), (grid.steps + 1,))
        inner = np.cumsum(g[None, :, None] * dM, axis=1)
        out[:, 1:] = f[None, 1:, None] * inner
    else:
        r = s[:-1]
        for k in range(1, grid.steps + 1):
            w = np.asarray(kernel(s[k], r[:k]), dtype=float)
            w = np.broadcast_to(w, (k,))
            for p in range(dM.shape[0]):
                out[p, k] = w @ dM[p, :k]
    meta = {"kind": "convolution", "kernel": kernel, "driver": driver}
    if single:
        return SamplePath(grid, out[0], meta)
    return PathEnsemble(grid, out, driver.seeds, meta)


def gen_independent(grid: TimeGrid, kind: str = "brownian", *, f: Callable | None = None,
                    dim: int = 1, seed: int = 0, n_paths: int | None = None):
    """A process independent of every filtration driver.

    ``kind="deterministic"`` samples ``f`` on the grid; ``kind="brownian"``
    draws from the reserved ``"independent"`` stream namespace.
    """
    if kind == "deterministic":
        if f is None:
            raise ConfigurationError("deterministic independent process needs f")
        vals = np.asarray(f(grid.points), dtype=float)
        path = SamplePath(grid, vals, {"kind": "independent", "independent": True})
        return PathEnsemble.broadcast(path, n_paths) if n_paths else path
    if kind == "brownian":
        if n_paths:
            ens = brownian_ensemble(grid, dim, n_paths, seed, namespace="independent")
            ens.meta.update(kind="independent", independent=True)
            return ens
        path = gen_brownian(grid, dim, seed, namespace="independent")
        path.meta.update(kind="independent", independent=True)
        return path
    raise ConfigurationError(f"unknown independent process kind {kind!r}")


# -------------------------------------------------------------- stopping


@dataclass(frozen=True)
class StoppingRule:
    """``level-exit``: first ``k`` with ``|X_k| >= level`` (``steps`` if never).
    ``deterministic-time``: the grid index of ``time``.

    A level-exit rule may name a ``reference`` path or ensemble whose exit
    time is applied to whatever is being stopped.
    """

    kind: str
    level: float | None = None
    time: float | None = None
    reference: object = None

    def __post_init__(self):
        if self.kind == "level-exit":
            if self.level is None or not self.level > 0:
                raise ConfigurationError("level-exit needs level > 0")
        elif self.kind == "deterministic-time":
            if self.time is None:
                raise ConfigurationError("deterministic-time needs time")
        else:
            raise ConfigurationError(f"unknown stopping rule {self.kind!r}")


def stopping_index(path, rule: StoppingRule):
    """Stopping index ``k*`` (int for a path, array for an ensemble)."""
    grid = path.grid
    if rule.kind == "deterministic-time":
        if not grid.t0 <= rule.time <= grid.T + 1e-12:
            raise ConfigurationError("stopping time outside the grid")
        k = grid.index(rule.time)
        return k if isinstance(path, SamplePath) else np.full(path.n_paths, k)
    ref = rule.reference if rule.reference is not None else path
    tf = ref.time_first()
    norm = np.abs(tf[..., 0]) if tf.shape[-1] == 1 else np.linalg.norm(
        tf.reshape(tf.shape[0], *tf.shape[1:-1], -1), axis=-1)
    hit = norm >= rule.level
    k = np.where(hit.any(axis=0), hit.argmax(axis=0), grid.steps)
    if isinstance(path, SamplePath):
        return int(k)
    return np.broadcast_to(k, (path.n_paths,)).copy()


def stop_at(path, k):
    """Freeze ``path`` after index ``k`` (per-path indices for ensembles)."""
    tf = path.time_first()
    idx = np.minimum(np.arange(tf.shape[0])[:, None], np.atleast_1d(k)[None, :])
    if isinstance(path, SamplePath):
        return SamplePath(path.grid, tf[idx[:, 0]], dict(path.meta, stopped_at=int(k)))
    cols = np.arange(tf.shape[1])[None, :]
    out = tf[idx, cols]
    return from_time_first(path, out, stopped_at=np.asarray(k))


def stop_path(path, rule: StoppingRule):
    """Stopped process ``X^tau``: value at ``s_k`` is the value at ``s_min(k, k*)``."""
    return stop_at(path, stopping_index(path, rule))


# ------------------------------------------------------------------- I/O


def write_path_csv(path: SamplePath, fp) -> None:
    """Header ``s,x1,...,xn``; one row per grid point, 17 significant digits."""
    vals = path.values.reshape(path.values.shape[0], -1)
    writer = csv.writer(fp, lineterminator="\n")
    writer.writerow(["s"] + [f"x{i + 1}" for i in range(vals.shape[1])])
    for s, row in zip(path.grid.points, vals):
        writer.writerow([f"{s:.17g}"] + [f"{v:.17g}" for v in row])


def read_path_csv(fp, grid: TimeGrid | None = None) -> SamplePath:
    rows = list(csv.reader(fp))
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    s = data[:, 0]
    if grid is None:
        grid = make_grid(s[0], s[-1], len(s) - 1)
    return SamplePath(grid, data[:, 1:])


def stack_paths(paths: Sequence[SamplePath]) -> PathEnsemble:
    grid = paths[0].grid
    return PathEnsemble(grid, np.stack([p.values for p in paths]))
