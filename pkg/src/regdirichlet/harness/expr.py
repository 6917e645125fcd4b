"""A tiny arithmetic language for coefficient fields.

Grammar: numbers, ``t``, ``x1 .. xn`` (also ``x_1``), ``+ - * /``, unary
minus, parentheses and the functions ``sin cos exp abs``.  Expressions are
parsed with :mod:`ast` and compiled to numpy callables; nothing else is
evaluated.
"""

from __future__ import annotations

import ast
import re

import numpy as np

from ..pathkit import ConfigurationError

__all__ = ["compile_expr", "compile_vector", "ExpressionError"]

FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "abs": np.abs}
_BIN = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide}
_VAR = re.compile(r"^x_?(\d+)$")


class ExpressionError(ConfigurationError):
    pass


def _check(node, n):
    if isinstance(node, ast.Expression):
        return _check(node.body, n)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
            and not isinstance(node.value, bool):
        return
    if isinstance(node, ast.Name):
        if node.id == "t":
            return
        m = _VAR.match(node.id)
        if m and 1 <= int(m.group(1)) <= n:
            return
        raise ExpressionError(f"unknown variable {node.id!r} (state dimension {n})")
    if isinstance(node, ast.BinOp) and type(node.op) in _BIN:
        _check(node.left, n)
        _check(node.right, n)
        return
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        _check(node.operand, n)
        return
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) \
            and node.func.id in FUNCS and len(node.args) == 1 and not node.keywords:
        _check(node.args[0], n)
        return
    raise ExpressionError(f"unsupported syntax: {ast.dump(node)[:60]}")


def _eval(node, t, x):
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        if node.id == "t":
            return t
        return x[..., int(_VAR.match(node.id).group(1)) - 1]
    if isinstance(node, ast.BinOp):
        return _BIN[type(node.op)](_eval(node.left, t, x), _eval(node.right, t, x))
    if isinstance(node, ast.UnaryOp):
        v = _eval(node.operand, t, x)
        return -v if isinstance(node.op, ast.USub) else v
    return FUNCS[node.func.id](_eval(node.args[0], t, x))


def compile_expr(text: str, n: int = 1):
    """Compile ``text`` to ``f(t, x) -> (...)`` for ``x`` of shape ``(..., n)``."""
    try:
        tree = ast.parse(str(text).strip(), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse expression {text!r}: {exc.msg}") from None
    _check(tree, n)
    body = tree.body

    def f(t, x):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t if t is not None else 0.0, dtype=float)
        out = _eval(body, t, x)
        return np.broadcast_to(out, np.broadcast_shapes(x.shape[:-1], np.shape(out))).astype(float)
    f.source = text
    return f


def compile_vector(text: str, n: int = 1):
    """``;``-separated components compiled to ``f(t, x) -> (..., n)``."""
    parts = [p for p in str(text).split(";")]
    if len(parts) != n:
        raise ExpressionError(f"expected {n} ';'-separated components, got {len(parts)}")
    comps = [compile_expr(p, n) for p in parts]

    def f(t, x):
        return np.stack([c(t, x) for c in comps], axis=-1)
    f.source = text
    return f
