"""A small arithmetic grammar for coefficient and source expressions.

Accepted: numbers, ``+ - * / ^`` (``^`` is power), parentheses, ``sin``,
``cos``, ``exp``, the constant ``pi`` and the variables ``x``, ``x1``, ``x2``,
``t``.  Expressions are parsed with :mod:`ast` and checked against that
whitelist before they are compiled to a numpy function, so configuration
files never reach ``eval`` with arbitrary code.
"""
from __future__ import annotations

import ast
import math
from dataclasses import dataclass

import numpy as np
import sympy

from .exceptions import ConfigViolation

FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
CONSTANTS = {"pi": math.pi}
VARIABLES = ("x", "x1", "x2", "t")
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide, ast.Pow: np.power}
_UNARY = {ast.USub: np.negative, ast.UAdd: np.positive}


class ExpressionError(ConfigViolation):
    pass


def _check(node: ast.AST, text: str) -> set[str]:
    """Validate ``node``; return the variables it uses."""
    if isinstance(node, ast.Expression):
        return _check(node.body, text)
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _check(node.left, text) | _check(node.right, text)
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
        return _check(node.operand, text)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return set()
    if isinstance(node, ast.Name):
        if node.id in CONSTANTS:
            return set()
        if node.id in VARIABLES:
            return {node.id}
        raise ExpressionError(f"unknown name {node.id!r} in {text!r}")
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
            raise ExpressionError(f"only {sorted(FUNCTIONS)} may be called in {text!r}")
        if len(node.args) != 1 or node.keywords:
            raise ExpressionError(f"{node.func.id} takes exactly one argument in {text!r}")
        return _check(node.args[0], text)
    raise ExpressionError(f"unsupported syntax {type(node).__name__} in {text!r}")


def _eval(node: ast.AST, env: dict):
    if isinstance(node, ast.Expression):
        return _eval(node.body, env)
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_eval(node.left, env), _eval(node.right, env))
    if isinstance(node, ast.UnaryOp):
        return _UNARY[type(node.op)](_eval(node.operand, env))
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        return CONSTANTS[node.id] if node.id in CONSTANTS else env[node.id]
    return FUNCTIONS[node.func.id](_eval(node.args[0], env))


@dataclass(frozen=True)
class Expression:
    text: str

    def __post_init__(self):
        src = str(self.text).replace("^", "**")
        try:
            tree = ast.parse(src, mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {self.text!r}: {exc.msg}") from exc
        object.__setattr__(self, "_tree", tree)
        object.__setattr__(self, "variables", frozenset(_check(tree, self.text)))

    def __call__(self, points, t=0.0) -> np.ndarray:
        """Evaluate on ``points`` of shape ``(..., ndim)``; the result has shape ``points.shape[:-1]``."""
        p = np.asarray(points, dtype=float)
        if p.ndim == 0:
            p = p.reshape(1, 1)
        env = {"x": p[..., 0], "x1": p[..., 0], "t": np.asarray(t, dtype=float)}
        if "x2" in self.variables:
            if p.shape[-1] < 2:
                raise ExpressionError(f"{self.text!r} uses x2 on a one-dimensional domain")
            env["x2"] = p[..., 1]
        out = _eval(self._tree, env)
        return np.broadcast_to(np.asarray(out, dtype=float), np.broadcast_shapes(p.shape[:-1], np.shape(out))).copy()

    def derivative_t(self) -> "Expression | None":
        """Symbolic time derivative via sympy, or None when it cannot be expressed in the grammar."""
        syms = {v: sympy.Symbol(v, real=True) for v in VARIABLES}
        expr = sympy.sympify(self.text.replace("^", "**"), locals={**syms, "pi": sympy.pi})
        d = sympy.diff(expr, syms["t"])
        text = str(d).replace("**", "^")
        try:
            return Expression(text)
        except ConfigViolation:
            return None


def compile_expr(text) -> Expression:
    if isinstance(text, Expression):
        return text
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        text = repr(float(text))
    return Expression(str(text))
