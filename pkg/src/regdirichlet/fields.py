"""Scalar fields ``u(t, x)`` with analytic derivatives, and a small stock of them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import erf

from .pathkit import ConfigurationError, from_time_first

__all__ = [
    "ScalarField",
    "along",
    "gradient_probe",
    "linear",
    "quadratic",
    "time_only",
    "time_times_x",
    "sin_exp",
    "smoothed_abs",
    "sqrt_time_linear",
    "holder_time_linear",
    "constant",
    "heat_quadratic",
    "heat_smoothed_abs",
]

TAGS = ("C01", "C12", "Chalf-gamma-1")


@dataclass
class ScalarField:
    """A real field on (time, space) evaluated on broadcast arrays.

    ``u(t, x)`` takes ``t`` of shape ``(...)`` and ``x`` of shape
    ``(..., n)`` and returns ``(...)``; ``grad_x`` returns ``(..., n)``,
    ``hess_x`` returns ``(..., n, n)`` and ``dt_u`` returns ``(...)``.
    The first argument need not be time: in bracket stability checks it is
    a bounded-variation process.
    """

    u: Callable
    grad_x: Callable
    dt_u: Callable | None = None
    hess_x: Callable | None = None
    tag: str = "C01"
    gamma: float | None = None
    name: str = ""

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ConfigurationError(f"unknown smoothness tag {self.tag!r}")
        if self.tag == "C12" and (self.dt_u is None or self.hess_x is None):
            raise ConfigurationError("a C12 field needs dt_u and hess_x")
        if self.tag == "Chalf-gamma-1" and not (self.gamma and self.gamma > 0):
            raise ConfigurationError("a Chalf-gamma-1 field needs gamma > 0")


def _eval(fn, first_tf, x_tf):
    t = np.broadcast_to(first_tf, x_tf.shape[:-1])
    return np.asarray(fn(t, x_tf), dtype=float)


def along(field: ScalarField, X, what: str = "u", first=None):
    """Evaluate ``u``, ``grad``, ``hess`` or ``dt`` of ``field`` along ``X``.

    ``first`` is the path fed into the first argument; by default the grid
    times.  Returns a path of the same kind as ``X``.
    """
    xt = X.time_first()
    if first is None:
        s = X.grid.points
        first_tf = s.reshape((-1,) + (1,) * (xt.ndim - 2))
    else:
        first_tf = first.time_first()[..., 0]
    fn = {"u": field.u, "grad": field.grad_x, "hess": field.hess_x, "dt": field.dt_u}[what]
    if fn is None:
        raise ConfigurationError(f"field {field.name!r} has no {what} derivative")
    val = _eval(fn, first_tf, xt)
    if what in ("u", "dt"):
        val = val[..., None]
    return from_time_first(X, val, kind=f"{field.name}:{what}")


def gradient_probe(field: ScalarField, n: int, rng: np.random.Generator, *, probes: int = 64,
                   t_range=(0.0, 1.0), x_scale: float = 2.0, h: float = 1e-5) -> float:
    """Largest ``|fd - grad| / (1 + |grad|)`` over random probe points."""
    t = rng.uniform(*t_range, size=probes)
    x = rng.normal(scale=x_scale, size=(probes, n))
    g = np.asarray(field.grad_x(t, x), dtype=float)
    worst = 0.0
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        fd = (field.u(t, x + e) - field.u(t, x - e)) / (2 * h)
        worst = max(worst, float(np.max(np.abs(fd - g[:, i]) / (1 + np.abs(g[:, i])))))
    return worst


# ------------------------------------------------------------ stock fields


def _zeros(t, x):
    return np.zeros(x.shape[:-1])


def _zero_hess(t, x):
    n = x.shape[-1]
    return np.zeros(x.shape[:-1] + (n, n))


def linear(c) -> ScalarField:
    c = np.atleast_1d(np.asarray(c, dtype=float))
    return ScalarField(
        lambda t, x: x @ c,
        lambda t, x: np.broadcast_to(c, x.shape).copy(),
        _zeros, _zero_hess, "C12", name="linear")


def quadratic() -> ScalarField:
    """``|x|^2``."""
    def hess(t, x):
        n = x.shape[-1]
        return np.broadcast_to(2 * np.eye(n), x.shape[:-1] + (n, n)).copy()
    return ScalarField(lambda t, x: np.sum(x * x, axis=-1), lambda t, x: 2 * x,
                       _zeros, hess, "C12", name="quadratic")


def time_only() -> ScalarField:
    return ScalarField(lambda t, x: np.asarray(t) + 0 * x[..., 0],
                       lambda t, x: np.zeros_like(x),
                       lambda t, x: np.ones(x.shape[:-1]), _zero_hess, "C12", name="time")


def time_times_x() -> ScalarField:
    """``t * x_1``."""
    def grad(t, x):
        g = np.zeros_like(x)
        g[..., 0] = t
        return g
    return ScalarField(lambda t, x: t * x[..., 0], grad, lambda t, x: x[..., 0],
                       _zero_hess, "C12", name="t*x")


def sin_exp() -> ScalarField:
    """``sin(x_1) exp(-t)``."""
    def grad(t, x):
        g = np.zeros_like(x)
        g[..., 0] = np.cos(x[..., 0]) * np.exp(-t)
        return g

    def hess(t, x):
        n = x.shape[-1]
        H = np.zeros(x.shape[:-1] + (n, n))
        H[..., 0, 0] = -np.sin(x[..., 0]) * np.exp(-t)
        return H
    return ScalarField(lambda t, x: np.sin(x[..., 0]) * np.exp(-t), grad,
                       lambda t, x: -np.sin(x[..., 0]) * np.exp(-t), hess, "C12",
                       name="sin*exp")


def constant(c: float = 1.0) -> ScalarField:
    return ScalarField(lambda t, x: np.full(x.shape[:-1], float(c)),
                       lambda t, x: np.zeros_like(x), _zeros, _zero_hess, "C12",
                       name="constant")


def _smooth_abs(x, delta):
    return x * erf(x / (delta * math.sqrt(2))) + delta * math.sqrt(2 / math.pi) * np.exp(
        -x * x / (2 * delta * delta))


def smoothed_abs(delta: float = 0.01) -> ScalarField:
    """Gaussian-smoothed ``|x_1|`` at scale ``delta``: ``E|x_1 + delta Z|``.

    Its gradient is ``erf(x / (delta sqrt 2))``; with small ``delta`` it
    stands in for a C^{0,1} field whose second derivative is unbounded in
    practice.
    """
    def grad(t, x):
        g = np.zeros_like(x)
        g[..., 0] = erf(x[..., 0] / (delta * math.sqrt(2)))
        return g

    def hess(t, x):
        n = x.shape[-1]
        H = np.zeros(x.shape[:-1] + (n, n))
        z = x[..., 0] / delta
        H[..., 0, 0] = 2 * np.exp(-z * z / 2) / (delta * math.sqrt(2 * math.pi))
        return H
    return ScalarField(lambda t, x: _smooth_abs(x[..., 0], delta), grad, _zeros, hess,
                       "C01", name=f"smoothed_abs({delta:g})")


def sqrt_time_linear(delta: float = 0.1) -> ScalarField:
    """``sqrt(t + delta) * x_1``: 1/2-Hölder in time near ``t = -delta``, tagged gamma=1/2."""
    def grad(t, x):
        g = np.zeros_like(x)
        g[..., 0] = np.sqrt(t + delta)
        return g
    return ScalarField(lambda t, x: np.sqrt(t + delta) * x[..., 0], grad,
                       tag="Chalf-gamma-1", gamma=0.5, name=f"sqrt(t+{delta:g})*x")


def holder_time_linear(alpha: float = 0.75, center: float = 0.5) -> ScalarField:
    """``|t - center|^alpha * x_1`` with ``alpha > 1/2``."""
    if not 0.5 < alpha <= 1:
        raise ConfigurationError("alpha must lie in (1/2, 1]")

    def a(t):
        return np.abs(np.asarray(t) - center) ** alpha

    def grad(t, x):
        g = np.zeros_like(x)
        g[..., 0] = a(t)
        return g
    return ScalarField(lambda t, x: a(t) * x[..., 0], grad, tag="Chalf-gamma-1",
                       gamma=alpha - 0.5, name=f"|t-{center:g}|^{alpha:g}*x")


# ---------------------------------------- closed-form heat-equation solutions


def heat_quadratic(T: float = 1.0) -> ScalarField:
    """``x^2 + (T - t)`` (1-d), solving ``u_t + u_xx / 2 = 0`` with ``u(T) = x^2``."""
    return ScalarField(lambda t, x: x[..., 0] ** 2 + (T - t), lambda t, x: 2 * x,
                       lambda t, x: -np.ones(x.shape[:-1]),
                       lambda t, x: np.full(x.shape[:-1] + (1, 1), 2.0), "C12",
                       name="heat_quadratic")


def heat_smoothed_abs(T: float = 1.0, floor: float = 0.0) -> ScalarField:
    """``E|x + W_{T-t}|``, the heat flow of ``|x|``; ``floor`` adds a variance offset.

    With ``floor = 0`` this is C^{0,1} on ``[0, T)`` only; its gradient
    ``erf(x / sqrt(2 (T - t)))`` jumps at ``t = T``.
    """
    def scale(t):
        return np.sqrt(np.maximum(T - np.asarray(t), 0.0) + floor)

    def grad(t, x):
        sc = scale(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(sc > 0, erf(x[..., 0] / (np.maximum(sc, 1e-300) * math.sqrt(2))),
                         np.sign(x[..., 0]))
        return g[..., None]

    def u(t, x):
        sc = scale(t)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            return np.where(sc > 0, _smooth_abs(x[..., 0], np.maximum(sc, 1e-300)),
                            np.abs(x[..., 0]))
    return ScalarField(u, grad, name="heat_abs")
