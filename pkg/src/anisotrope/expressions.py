"""A tiny safe arithmetic grammar for scenario configs.

Supports +, -, *, /, ^ (power) and the functions sqrt, sin, cos, exp, abs on
coordinate names.  Expressions compile to vectorized numpy callables; nothing
outside the whitelist parses.
"""

from __future__ import annotations

import ast

import numpy as np

__all__ = ["compile_expression", "ExpressionError"]

_FUNCS = {
    "sqrt": np.sqrt,
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "abs": np.abs,
}

_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}

_UNARY = {ast.USub: np.negative, ast.UAdd: lambda x: x}


class ExpressionError(ValueError):
    pass


def _validate(node, variables):
    if isinstance(node, ast.Expression):
        _validate(node.body, variables)
    elif isinstance(node, ast.BinOp):
        if type(node.op) not in _BINOPS:
            raise ExpressionError(f"operator {type(node.op).__name__} not allowed")
        _validate(node.left, variables)
        _validate(node.right, variables)
    elif isinstance(node, ast.UnaryOp):
        if type(node.op) not in _UNARY:
            raise ExpressionError(f"operator {type(node.op).__name__} not allowed")
        _validate(node.operand, variables)
    elif isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
            raise ExpressionError("only sqrt/sin/cos/exp/abs calls are allowed")
        if len(node.args) != 1 or node.keywords:
            raise ExpressionError("functions take exactly one argument")
        _validate(node.args[0], variables)
    elif isinstance(node, ast.Name):
        if node.id not in variables:
            raise ExpressionError(f"unknown name {node.id!r}")
    elif isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)):
            raise ExpressionError("only numeric constants are allowed")
    else:
        raise ExpressionError(f"syntax {type(node).__name__} not allowed")


def _evaluate(node, env):
    if isinstance(node, ast.Expression):
        return _evaluate(node.body, env)
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_evaluate(node.left, env),
                                      _evaluate(node.right, env))
    if isinstance(node, ast.UnaryOp):
        return _UNARY[type(node.op)](_evaluate(node.operand, env))
    if isinstance(node, ast.Call):
        return _FUNCS[node.func.id](_evaluate(node.args[0], env))
    if isinstance(node, ast.Name):
        return env[node.id]
    if isinstance(node, ast.Constant):
        return node.value
    raise ExpressionError("unreachable")


def compile_expression(text, variables=("x", "y", "z")):
    """Compile an expression string into ``f(points (M, d)) -> (M,)``.

    ``^`` is read as exponentiation.  Coordinates bind positionally to the
    variable names.
    """
    source = text.replace("^", "**")
    try:
        tree = ast.parse(source, mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse expression {text!r}: {exc}") from exc
    variables = tuple(variables)
    _validate(tree, set(variables))

    def fn(points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        env = {name: points[:, i] for i, name in enumerate(variables)
               if i < points.shape[1]}
        out = _evaluate(tree, env)
        return np.broadcast_to(np.asarray(out, dtype=float),
                               (points.shape[0],)).copy()

    fn.source = text
    return fn
