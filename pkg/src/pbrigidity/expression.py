"""A small arithmetic language for defining F and G on the command line.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := unary ('^' factor)?
    unary  := '-' unary | atom
    atom   := number | 'x' | 'y' | 'pi' | name '(' args ')' | '(' expr ')'

so ``^`` is right-associative and ``-x^2`` means ``(-x)^2``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from .field_core import Grid2D, ScalarField


class ExpressionError(ValueError):
    """Syntax error; ``offset`` is the 0-based character position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"offset {offset}: {message}")
        self.message = message
        self.offset = offset


class EvaluationError(ValueError):
    """Evaluation produced a non-finite value; carries the first offending node."""

    def __init__(self, message: str, node=None, coords=None):
        where = ""
        if node is not None:
            where = f" at node {node} (x={coords[0]!r}, y={coords[1]!r})"
        super().__init__(message + where)
        self.node = node
        self.coords = coords


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str  # 'x', 'y' or 'pi'


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


Expr = Union[Num, Var, Neg, BinOp, Call]

ARITY = {"sin": 1, "cos": 1, "exp": 1, "sqrt": 1, "abs": 1, "bump": 3}

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens, pos = [], 0
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ExpressionError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.peek()
        if val != value or kind != "op":
            what = "end of input" if kind == "end" else repr(val)
            raise ExpressionError(f"expected {value!r}, found {what}", pos)
        self.i += 1

    def expr(self):
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            node = BinOp(op, node, self.factor())
        return node

    def factor(self):
        base = self.unary()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            return BinOp("^", base, self.factor())
        return base

    def unary(self):
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return Neg(self.unary())
        return self.atom()

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            v = float(val)
            if not math.isfinite(v):
                raise ExpressionError(f"number {val} overflows", pos)
            return Num(v)
        if kind == "name":
            if val in ("x", "y", "pi"):
                return Var(val)
            if val not in ARITY:
                raise ExpressionError(f"unknown function or variable {val!r}", pos)
            self.expect("(")
            args = [self.expr()]
            while self.peek()[:2] == ("op", ","):
                self.take()
                args.append(self.expr())
            self.expect(")")
            if len(args) != ARITY[val]:
                raise ExpressionError(
                    f"{val} takes {ARITY[val]} argument(s), got {len(args)}", pos)
            return Call(val, tuple(args))
        if (kind, val) == ("op", "("):
            node = self.expr()
            if self.peek()[0] == "end":
                raise ExpressionError(f"unbalanced parenthesis opened at offset {pos}",
                                      self.peek()[2])
            self.expect(")")
            return node
        if kind == "end":
            raise ExpressionError("unexpected end of input", pos)
        raise ExpressionError(f"unexpected token {val!r}", pos)


def parse_expression(text: str) -> Expr:
    p = _Parser(text)
    node = p.expr()
    kind, val, pos = p.peek()
    if kind != "end":
        msg = "unbalanced parenthesis" if val == ")" else f"unexpected token {val!r}"
        raise ExpressionError(msg, pos)
    return node


def to_text(e: Expr) -> str:
    """Fully parenthesized text that parses back to the same tree."""
    if isinstance(e, Num):
        return repr(float(e.value))
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"(-{to_text(e.arg)})"
    if isinstance(e, BinOp):
        return f"({to_text(e.left)} {e.op} {to_text(e.right)})"
    return f"{e.name}({', '.join(to_text(a) for a in e.args)})"


def bump(x, y, cx, cy, r):
    """``exp(1 - 1/(1 - s))`` for ``s = ((x-cx)^2 + (y-cy)^2) / r^2 < 1``, else 0."""
    x, y, cx, cy, r = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, y, cx, cy, r)))
    with np.errstate(divide="ignore", invalid="ignore"):
        s = ((x - cx) ** 2 + (y - cy) ** 2) / (r * r)
        out = np.where(s < 1, np.exp(1.0 - 1.0 / (1.0 - np.where(s < 1, s, 0.0))), 0.0)
    return np.where(r > 0, out, np.nan)


_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt, "abs": np.abs}


def _eval(e: Expr, x, y):
    if isinstance(e, Num):
        return np.full(np.shape(x), e.value)
    if isinstance(e, Var):
        return {"x": x, "y": y}.get(e.name, np.full(np.shape(x), math.pi))
    if isinstance(e, Neg):
        return -_eval(e.arg, x, y)
    if isinstance(e, BinOp):
        a, b = _eval(e.left, x, y), _eval(e.right, x, y)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            return np.where(b == 0, np.nan, a / np.where(b == 0, 1.0, b))
        return np.power(a, b)
    args = [_eval(a, x, y) for a in e.args]
    if e.name == "bump":
        return bump(x, y, *args)
    return _FUNCS[e.name](*args)


def evaluate(e: Expr, x, y):
    """Vectorized evaluation; non-finite results raise ``EvaluationError``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x, y = np.broadcast_arrays(x, y)
    with np.errstate(all="ignore"):
        out = np.asarray(_eval(e, x, y), dtype=float)
    bad = ~np.isfinite(out)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0]) if out.ndim else ()
        raise EvaluationError("expression is not finite", idx,
                              (float(x[idx]), float(y[idx])))
    return out if out.ndim else float(out)


def evaluate_on_grid(e: Expr, grid: Grid2D) -> np.ndarray:
    X, Y = grid.mesh()
    return evaluate(e, X, Y)


def sample_expression(e: Expr, grid: Grid2D, margin: int = 0) -> ScalarField:
    """Node samples with ``margin`` outer layers forced to zero (plane only)."""
    if margin < 0:
        raise ValueError("margin must be >= 0")
    return ScalarField.with_margin(grid, evaluate_on_grid(e, grid), margin)


def margin_truncation(e: Expr, grid: Grid2D, margin: int) -> float:
    """Largest |value| discarded by margin zeroing; 0 means nothing was truncated."""
    if margin <= 0 or grid.periodic:
        return 0.0
    v = np.abs(evaluate_on_grid(e, grid))
    if 2 * margin < min(v.shape):
        v[margin:-margin, margin:-margin] = 0.0
    return float(v.max())
