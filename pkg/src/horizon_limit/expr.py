"""Arithmetic expressions for utility and dynamics functions.

Expressions are parsed into small immutable trees and evaluated either on
floats, on :class:`Dual` numbers (forward-mode first derivatives) or on
numpy arrays.  Precedence, loosest first::

    + -        left associative
    * /        left associative
    unary -
    ^          right associative, binds tightest

Functions: ``sqrt log exp abs sin cos`` (one argument) and ``pow`` (two).
Variables are plain identifiers; whether a variable is allowed is decided
when the expression is bound to a problem, not at parse time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Mapping, Union

import numpy as np

__all__ = [
    "Expr", "Num", "Var", "Neg", "BinOp", "Call", "Dual",
    "ExprError", "ParseError", "UnknownFunctionError", "UnboundVariableError",
    "DomainError", "parse", "to_source", "variables", "evaluate", "eval_dual",
    "compile_expr", "compile_array", "FUNCTIONS", "VARIABLES",
]

VARIABLES = frozenset({"c", "k", "u", "y", "t"})
FUNCTIONS = {"sqrt": 1, "log": 1, "exp": 1, "abs": 1, "sin": 1, "cos": 1, "pow": 2}


class ExprError(Exception):
    pass


class ParseError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte {offset}")
        self.offset = offset


class UnknownFunctionError(ParseError):
    pass


class UnboundVariableError(ExprError):
    pass


class DomainError(ExprError, ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# Tree

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


Expr = Union[Num, Var, Neg, BinOp, Call]


# ---------------------------------------------------------------------------
# Tokenizer / parser

_ALIASES = {"−": "-", "×": "*", "·": "*", "÷": "/"}


def _tokenize(source: str) -> list[tuple[str, object, int]]:
    tokens = []
    i = 0
    n = len(source)

    def offset(pos: int) -> int:
        return len(source[:pos].encode("utf-8"))

    while i < n:
        ch = source[i]
        if ch.isspace():
            i += 1
            continue
        ch = _ALIASES.get(ch, ch)
        if ch.isdigit() or (ch == "." and i + 1 < n and source[i + 1].isdigit()):
            start = i
            while i < n and source[i].isdigit():
                i += 1
            if i < n and source[i] == ".":
                i += 1
                while i < n and source[i].isdigit():
                    i += 1
            if i < n and source[i] in "eE":
                j = i + 1
                if j < n and source[j] in "+-":
                    j += 1
                if j < n and source[j].isdigit():
                    i = j
                    while i < n and source[i].isdigit():
                        i += 1
            tokens.append(("num", float(source[start:i]), offset(start)))
            continue
        if ch.isalpha() or ch == "_":
            start = i
            while i < n and (source[i].isalnum() or source[i] == "_"):
                i += 1
            tokens.append(("ident", source[start:i], offset(start)))
            continue
        if ch in "+-*/^(),":
            tokens.append((ch, ch, offset(i)))
            i += 1
            continue
        raise ParseError(f"unexpected character {source[i]!r}", offset(i))
    tokens.append(("end", None, offset(n)))
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.tokens = _tokenize(source)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def take(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str):
        tok = self.take()
        if tok[0] != kind:
            raise ParseError(f"expected {kind!r}, found {_describe(tok)}", tok[2])
        return tok

    def expression(self) -> Expr:
        node = self.term()
        while self.peek()[0] in ("+", "-"):
            op = self.take()[0]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.peek()[0] in ("*", "/"):
            op = self.take()[0]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.peek()[0] == "-":
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[0] == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        kind, value, off = self.take()
        if kind == "num":
            return Num(value)
        if kind == "ident":
            if self.peek()[0] != "(":
                return Var(value)
            if value not in FUNCTIONS:
                raise UnknownFunctionError(f"unknown function {value!r}", off)
            self.take()
            args = [self.expression()]
            while self.peek()[0] == ",":
                self.take()
                args.append(self.expression())
            self.expect(")")
            if len(args) != FUNCTIONS[value]:
                raise ParseError(
                    f"{value} takes {FUNCTIONS[value]} argument(s), got {len(args)}", off)
            return Call(value, tuple(args))
        if kind == "(":
            node = self.expression()
            self.expect(")")
            return node
        raise ParseError(f"unexpected {_describe((kind, value, off))}", off)


def _describe(tok) -> str:
    if tok[0] == "end":
        return "end of input"
    return repr(tok[1])


def parse(source: str) -> Expr:
    """Parse ``source`` into an expression tree.

    Raises :class:`ParseError` (with a byte offset) on malformed input and
    :class:`UnknownFunctionError` for calls to functions outside
    :data:`FUNCTIONS`.
    """
    if not source or not source.strip():
        raise ParseError("empty expression", 0)
    parser = _Parser(source)
    node = parser.expression()
    tok = parser.peek()
    if tok[0] != "end":
        raise ParseError(f"unexpected {_describe(tok)}", tok[2])
    return node


# ---------------------------------------------------------------------------
# Printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _prec(node: Expr) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _PREC["neg"]
    if isinstance(node, Num) and (node.value < 0 or not math.isfinite(node.value)):
        return 0
    return 5


def _wrap(node: Expr, parens: bool) -> str:
    text = to_source(node)
    return f"({text})" if parens else text


def to_source(node: Expr) -> str:
    """Render ``node`` so that ``parse(to_source(parse(s))) == parse(s)``."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return "-" + _wrap(node.operand, _prec(node.operand) < _PREC["neg"])
    if isinstance(node, BinOp):
        p = _PREC[node.op]
        if node.op == "^":
            left = _wrap(node.left, _prec(node.left) <= p)
            right = _wrap(node.right, _prec(node.right) < _PREC["neg"])
            return f"{left}^{right}"
        left = _wrap(node.left, _prec(node.left) < p)
        right = _wrap(node.right, _prec(node.right) <= p)
        return f"{left} {node.op} {right}"
    if isinstance(node, Call):
        return f"{node.func}({', '.join(to_source(a) for a in node.args)})"
    raise TypeError(f"not an expression: {node!r}")


def variables(node: Expr) -> frozenset:
    if isinstance(node, Var):
        return frozenset({node.name})
    if isinstance(node, Num):
        return frozenset()
    if isinstance(node, Neg):
        return variables(node.operand)
    if isinstance(node, BinOp):
        return variables(node.left) | variables(node.right)
    return frozenset().union(*(variables(a) for a in node.args))


# ---------------------------------------------------------------------------
# Dual numbers

class Dual:
    """A value paired with its derivative along one input direction."""

    __slots__ = ("value", "deriv")

    def __init__(self, value: float, deriv: float = 0.0):
        self.value = float(value)
        self.deriv = float(deriv)

    def __repr__(self) -> str:
        return f"Dual({self.value!r}, {self.deriv!r})"

    def __iter__(self):
        yield self.value
        yield self.deriv

    def __eq__(self, other) -> bool:
        if isinstance(other, Dual):
            return self.value == other.value and self.deriv == other.deriv
        if isinstance(other, tuple) and len(other) == 2:
            return (self.value, self.deriv) == other
        return NotImplemented

    __hash__ = None

    @staticmethod
    def lift(x) -> "Dual":
        return x if isinstance(x, Dual) else Dual(x, 0.0)

    def __add__(self, other):
        o = Dual.lift(other)
        return Dual(self.value + o.value, self.deriv + o.deriv)

    __radd__ = __add__

    def __sub__(self, other):
        o = Dual.lift(other)
        return Dual(self.value - o.value, self.deriv - o.deriv)

    def __rsub__(self, other):
        return Dual.lift(other) - self

    def __mul__(self, other):
        o = Dual.lift(other)
        return Dual(self.value * o.value, self.deriv * o.value + self.value * o.deriv)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = Dual.lift(other)
        if o.value == 0.0:
            raise DomainError("division by zero")
        return Dual(self.value / o.value,
                    (self.deriv * o.value - self.value * o.deriv) / (o.value * o.value))

    def __rtruediv__(self, other):
        return Dual.lift(other) / self

    def __neg__(self):
        return Dual(-self.value, -self.deriv)

    def __pow__(self, other):
        return _pow(self, other)

    def __rpow__(self, other):
        return _pow(Dual.lift(other), self)

    def sqrt(self) -> "Dual":
        if self.value < 0.0:
            raise DomainError(f"sqrt of negative value {self.value!r}")
        v = math.sqrt(self.value)
        if v == 0.0:
            if self.deriv != 0.0:
                raise DomainError("derivative of sqrt at 0 is unbounded")
            return Dual(0.0, 0.0)
        return Dual(v, self.deriv / (2.0 * v))

    def log(self) -> "Dual":
        if self.value <= 0.0:
            raise DomainError(f"log of non-positive value {self.value!r}")
        return Dual(math.log(self.value), self.deriv / self.value)

    def exp(self) -> "Dual":
        e = _checked(math.exp, self.value)
        return Dual(e, e * self.deriv)

    def sin(self) -> "Dual":
        return Dual(math.sin(self.value), math.cos(self.value) * self.deriv)

    def cos(self) -> "Dual":
        return Dual(math.cos(self.value), -math.sin(self.value) * self.deriv)

    def __abs__(self) -> "Dual":
        if self.value == 0.0:
            if self.deriv != 0.0:
                raise DomainError("abs is not differentiable at 0")
            return Dual(0.0, 0.0)
        s = 1.0 if self.value > 0.0 else -1.0
        return Dual(abs(self.value), s * self.deriv)


def _checked(fn, *args):
    try:
        return fn(*args)
    except (ValueError, OverflowError, ZeroDivisionError) as exc:
        raise DomainError(f"{fn.__name__}{args}: {exc}") from None


def _pow(a, b):
    if isinstance(a, Dual) or isinstance(b, Dual):
        a, b = Dual.lift(a), Dual.lift(b)
        v = _scalar_pow(a.value, b.value)
        if b.deriv == 0.0:
            if a.deriv == 0.0:
                return Dual(v, 0.0)
            if a.value == 0.0:
                if b.value == 1.0:
                    return Dual(v, a.deriv)
                if b.value < 1.0:
                    raise DomainError("derivative of x^p at x=0 is unbounded for p<1")
            return Dual(v, b.value * _scalar_pow(a.value, b.value - 1.0) * a.deriv)
        if a.value <= 0.0:
            raise DomainError("variable exponent requires a positive base")
        return Dual(v, v * (b.deriv * math.log(a.value) + b.value * a.deriv / a.value))
    return _scalar_pow(a, b)


def _scalar_pow(a: float, b: float) -> float:
    if a == 0.0 and b < 0.0:
        raise DomainError("0 raised to a negative power")
    if a < 0.0 and b != math.floor(b):
        raise DomainError(f"negative base {a!r} with non-integer exponent {b!r}")
    return _checked(math.pow, a, b)


def _sqrt(x):
    if isinstance(x, Dual):
        return x.sqrt()
    if x < 0.0:
        raise DomainError(f"sqrt of negative value {x!r}")
    return math.sqrt(x)


def _log(x):
    if isinstance(x, Dual):
        return x.log()
    if x <= 0.0:
        raise DomainError(f"log of non-positive value {x!r}")
    return math.log(x)


def _exp(x):
    return x.exp() if isinstance(x, Dual) else _checked(math.exp, x)


def _sin(x):
    return x.sin() if isinstance(x, Dual) else math.sin(x)


def _cos(x):
    return x.cos() if isinstance(x, Dual) else math.cos(x)


def _div(a, b):
    if isinstance(a, Dual) or isinstance(b, Dual):
        return Dual.lift(a) / b
    if b == 0.0:
        raise DomainError("division by zero")
    return a / b


_SCALAR = {
    "sqrt": _sqrt, "log": _log, "exp": _exp, "abs": abs, "sin": _sin,
    "cos": _cos, "pow": _pow,
}


# numpy backend: same domain rules, checked over whole arrays
def _np_sqrt(x):
    if np.any(x < 0.0):
        raise DomainError("sqrt of negative value")
    return np.sqrt(x)


def _np_log(x):
    if np.any(x <= 0.0):
        raise DomainError("log of non-positive value")
    return np.log(x)


def _np_pow(a, b):
    a, b = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
    if np.any((a == 0.0) & (b < 0.0)):
        raise DomainError("0 raised to a negative power")
    if np.any((a < 0.0) & (b != np.floor(b))):
        raise DomainError("negative base with non-integer exponent")
    return np.power(a, b)


def _np_div(a, b):
    if np.any(np.asarray(b) == 0.0):
        raise DomainError("division by zero")
    return np.divide(a, b)


_ARRAY = {
    "sqrt": _np_sqrt, "log": _np_log, "exp": np.exp, "abs": np.abs, "sin": np.sin,
    "cos": np.cos, "pow": _np_pow,
}


# ---------------------------------------------------------------------------
# Closure compilation

def _build(node: Expr, index: Mapping[str, int], funcs, div, power) -> Callable:
    if isinstance(node, Num):
        value = float(node.value)
        return lambda a: value
    if isinstance(node, Var):
        if node.name not in index:
            raise UnboundVariableError(f"unbound variable {node.name!r}")
        i = index[node.name]
        return lambda a: a[i]
    if isinstance(node, Neg):
        f = _build(node.operand, index, funcs, div, power)
        return lambda a: -f(a)
    if isinstance(node, BinOp):
        l = _build(node.left, index, funcs, div, power)
        r = _build(node.right, index, funcs, div, power)
        op = node.op
        if op == "+":
            return lambda a: l(a) + r(a)
        if op == "-":
            return lambda a: l(a) - r(a)
        if op == "*":
            return lambda a: l(a) * r(a)
        if op == "/":
            return lambda a: div(l(a), r(a))
        return lambda a: power(l(a), r(a))
    if isinstance(node, Call):
        fn = funcs[node.func]
        if len(node.args) == 1:
            g = _build(node.args[0], index, funcs, div, power)
            return lambda a: fn(g(a))
        g, h = (_build(x, index, funcs, div, power) for x in node.args)
        return lambda a: fn(g(a), h(a))
    raise TypeError(f"not an expression: {node!r}")


@lru_cache(maxsize=256)
def compile_expr(node: Expr, params: tuple) -> Callable:
    """Compile ``node`` into ``f(*values)`` over the variables in ``params``.

    The compiled function accepts floats or :class:`Dual` values and raises
    :class:`DomainError` instead of returning NaN.
    """
    body = _build(node, {p: i for i, p in enumerate(params)}, _SCALAR, _div, _pow)

    def fn(*args):
        out = body(args)
        v = out.value if isinstance(out, Dual) else out
        if v != v:
            raise DomainError("evaluation produced NaN")
        return out

    return fn


@lru_cache(maxsize=256)
def compile_array(node: Expr, params: tuple) -> Callable:
    """Vectorised counterpart of :func:`compile_expr` on numpy arrays."""
    body = _build(node, {p: i for i, p in enumerate(params)}, _ARRAY, _np_div, _np_pow)

    def fn(*args):
        args = tuple(np.asarray(a, dtype=float) for a in args)
        with np.errstate(all="ignore"):
            out = body(args)
        shape = np.broadcast_shapes(*(a.shape for a in args))
        out = np.broadcast_to(np.asarray(out, dtype=float), shape)
        if np.any(np.isnan(out)):
            raise DomainError("evaluation produced NaN")
        return out

    return fn


def _as_expr(e) -> Expr:
    return parse(e) if isinstance(e, str) else e


def evaluate(e, bindings: Mapping[str, float]) -> float:
    """Evaluate ``e`` in double precision with the given variable values."""
    e = _as_expr(e)
    names = tuple(sorted(bindings))
    return float(compile_expr(e, names)(*(float(bindings[n]) for n in names)))


def eval_dual(e, bindings: Mapping[str, float], wrt: str) -> Dual:
    """Value and partial derivative of ``e`` with respect to ``wrt``."""
    e = _as_expr(e)
    if wrt not in bindings:
        raise UnboundVariableError(f"derivative variable {wrt!r} is not bound")
    names = tuple(sorted(bindings))
    args = [Dual(bindings[n], 1.0) if n == wrt else float(bindings[n]) for n in names]
    return Dual.lift(compile_expr(e, names)(*args))
