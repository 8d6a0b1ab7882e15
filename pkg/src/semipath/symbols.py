"""A small language for phase-space symbols ``H(x, p)`` and ``L_k(x, p)``.

Grammar::

    expr   := term (("+" | "-") term)*
    term   := factor (("*" | "/") factor)*
    factor := ["-"] atom ["^" integer]
    atom   := number | ident | "(" expr ")" | func "(" expr ")"
    func   := "sin" | "cos" | "exp" | "sqrt"

Identifiers are variables ``x<i>``/``p<i>`` (``1 <= i <= d``) or declared
parameters. Divisors and ``sqrt`` arguments must not depend on variables, so
every expression is smooth and closed under :func:`differentiate`.

Evaluation is vectorised: ``point`` may carry leading batch axes.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import reduce
from typing import Mapping, Union

import numpy as np


class SymbolError(ValueError):
    pass


class SymbolSyntaxError(SymbolError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class EvaluationError(SymbolError):
    pass


class NonPolynomialError(SymbolError):
    pass


# --- AST ---------------------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class Var:
    kind: str  # "x" or "p"
    index: int  # 1-based

    def flat(self, d: int) -> int:
        return self.index - 1 + (d if self.kind == "p" else 0)

    def __str__(self) -> str:
        return f"{self.kind}{self.index}"


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: int


@dataclass(frozen=True)
class Func:
    name: str
    arg: "Expr"


Expr = Union[Const, Param, Var, Neg, BinOp, Pow, Func]

FUNCTIONS = ("sin", "cos", "exp", "sqrt")
ZERO = Const(0.0)
ONE = Const(1.0)


@dataclass(frozen=True)
class ComplexSymbol:
    """A complex symbol given as a pair of real expressions."""

    re: Expr
    im: Expr = ZERO


def variable(d: int, flat: int) -> Var:
    if not 0 <= flat < 2 * d:
        raise ValueError(f"flat index {flat} out of range for d={d}")
    return Var("x", flat + 1) if flat < d else Var("p", flat - d + 1)


def free_variables(e: Expr) -> set[Var]:
    if isinstance(e, Var):
        return {e}
    if isinstance(e, (Const, Param)):
        return set()
    if isinstance(e, BinOp):
        return free_variables(e.left) | free_variables(e.right)
    if isinstance(e, Pow):
        return free_variables(e.base)
    return free_variables(e.arg)


def parameters(e: Expr) -> set[str]:
    if isinstance(e, Param):
        return {e.name}
    if isinstance(e, (Const, Var)):
        return set()
    if isinstance(e, BinOp):
        return parameters(e.left) | parameters(e.right)
    if isinstance(e, Pow):
        return parameters(e.base)
    return parameters(e.arg)


def is_constant(e: Expr) -> bool:
    return not free_variables(e)


# --- parsing -----------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)
_VAR = re.compile(r"([xp])([1-9]\d*)")


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            stripped = len(text[pos:]) - len(text[pos:].lstrip())
            raise SymbolSyntaxError(f"unexpected character {text[pos + stripped]!r}", pos + stripped)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, d: int, params):
        self.tokens = _tokenize(text)
        self.i = 0
        self.d = d
        self.params = frozenset(params)

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.take()
        if val != value or kind == "end":
            found = "end of input" if kind == "end" else repr(val)
            raise SymbolSyntaxError(f"expected {value!r}, found {found}", pos)

    def parse(self) -> Expr:
        e = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise SymbolSyntaxError(f"unexpected token {val!r}", pos)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            e = BinOp(op, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op, pos = self.take()[1:]
            rhs = self.factor()
            if op == "/" and not is_constant(rhs):
                raise SymbolSyntaxError("divisor depends on phase-space variables", pos)
            e = BinOp(op, e, rhs)
        return e

    def factor(self) -> Expr:
        negate = False
        if self.peek()[:2] == ("op", "-"):
            self.take()
            negate = True
        e = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            kind, val, pos = self.take()
            if kind != "num" or not re.fullmatch(r"\d+", val):
                raise SymbolSyntaxError("exponent must be a nonnegative integer literal", pos)
            e = Pow(e, int(val))
        return Neg(e) if negate else e

    def atom(self) -> Expr:
        kind, val, pos = self.take()
        if kind == "num":
            return Const(float(val))
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect(")")
            return e
        if kind == "ident":
            if val in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                if val == "sqrt" and not is_constant(arg):
                    raise SymbolSyntaxError("sqrt argument depends on phase-space variables", pos)
                return Func(val, arg)
            m = _VAR.fullmatch(val)
            if m:
                index = int(m.group(2))
                if index > self.d:
                    raise SymbolSyntaxError(f"variable {val} exceeds dimension d={self.d}", pos)
                return Var(m.group(1), index)
            if val in self.params:
                return Param(val)
            raise SymbolSyntaxError(f"unknown identifier {val!r}", pos)
        found = "end of input" if kind == "end" else repr(val)
        raise SymbolSyntaxError(f"unexpected {found}", pos)


def parse(text: str, d: int, params=()) -> Expr:
    """Parse ``text`` into an expression over ``d`` degrees of freedom."""
    if d < 1:
        raise ValueError("d must be positive")
    if not text or not text.strip():
        raise SymbolSyntaxError("empty expression", 0)
    return _Parser(text, d, params).parse()


def to_text(e: Expr) -> str:
    """Fully parenthesised text that :func:`parse` maps back to ``e``.

    Every output is itself an atom of the grammar, so operands never need
    extra parentheses.
    """
    if isinstance(e, Const):
        s = repr(float(e.value))
        return f"(-{s[1:]})" if e.value < 0 else s
    if isinstance(e, Param):
        return e.name
    if isinstance(e, Var):
        return str(e)
    if isinstance(e, Neg):
        return f"(-{to_text(e.arg)})"
    if isinstance(e, BinOp):
        return f"({to_text(e.left)} {e.op} {to_text(e.right)})"
    if isinstance(e, Pow):
        return f"({to_text(e.base)}^{e.exponent})"
    return f"{e.name}({to_text(e.arg)})"


# --- constant-folding constructors -------------------------------------------


def _c(e: Expr):
    return e.value if isinstance(e, Const) else None


def add(a: Expr, b: Expr) -> Expr:
    ca, cb = _c(a), _c(b)
    if ca is not None and cb is not None:
        return Const(ca + cb)
    if ca == 0:
        return b
    if cb == 0:
        return a
    return BinOp("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    ca, cb = _c(a), _c(b)
    if ca is not None and cb is not None:
        return Const(ca - cb)
    if cb == 0:
        return a
    if ca == 0:
        return neg(b)
    return BinOp("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    ca, cb = _c(a), _c(b)
    if ca is not None and cb is not None:
        return Const(ca * cb)
    if ca == 0 or cb == 0:
        return ZERO
    if ca == 1:
        return b
    if cb == 1:
        return a
    return BinOp("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    ca, cb = _c(a), _c(b)
    if ca is not None and cb not in (None, 0):
        return Const(ca / cb)
    if ca == 0:
        return ZERO
    if cb == 1:
        return a
    return BinOp("/", a, b)


def neg(a: Expr) -> Expr:
    ca = _c(a)
    if ca is not None:
        return Const(-ca)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def power(a: Expr, n: int) -> Expr:
    if n == 0:
        return ONE
    if n == 1:
        return a
    ca = _c(a)
    if ca is not None:
        return Const(ca**n)
    return Pow(a, n)


# --- differentiation ---------------------------------------------------------


def _as_var(var, d: int | None) -> Var:
    if isinstance(var, Var):
        return var
    if isinstance(var, str):
        m = _VAR.fullmatch(var)
        if not m:
            raise ValueError(f"not a variable name: {var!r}")
        return Var(m.group(1), int(m.group(2)))
    if d is None:
        raise ValueError("integer variable ids need the dimension d")
    return variable(d, int(var))


def differentiate(e: Expr, var, d: int | None = None) -> Expr:
    """Exact partial derivative of ``e`` with respect to ``var``.

    ``var`` is a :class:`Var`, a name such as ``"p1"``, or a flat index into
    ``(x1..xd, p1..pd)`` (which then needs ``d``).
    """
    return _diff(e, _as_var(var, d))


def _diff(e: Expr, v: Var) -> Expr:
    if isinstance(e, Var):
        return ONE if e == v else ZERO
    if isinstance(e, (Const, Param)):
        return ZERO
    if isinstance(e, Neg):
        return neg(_diff(e.arg, v))
    if isinstance(e, BinOp):
        dl, dr = _diff(e.left, v), _diff(e.right, v)
        if e.op == "+":
            return add(dl, dr)
        if e.op == "-":
            return sub(dl, dr)
        if e.op == "*":
            return add(mul(dl, e.right), mul(e.left, dr))
        # divisor is variable-free
        return div(dl, e.right)
    if isinstance(e, Pow):
        inner = _diff(e.base, v)
        if _c(inner) == 0:
            return ZERO
        return mul(mul(Const(float(e.exponent)), power(e.base, e.exponent - 1)), inner)
    inner = _diff(e.arg, v)
    if _c(inner) == 0:
        return ZERO
    if e.name == "sin":
        outer = Func("cos", e.arg)
    elif e.name == "cos":
        outer = neg(Func("sin", e.arg))
    elif e.name == "exp":
        outer = e
    else:
        raise SymbolError("sqrt of a variable expression cannot be differentiated")
    return mul(outer, inner)


def gradient(e: Expr, d: int) -> list[Expr]:
    return [differentiate(e, variable(d, a)) for a in range(2 * d)]


def hessian(e: Expr, d: int) -> list[list[Expr]]:
    grad = gradient(e, d)
    return [[differentiate(g, variable(d, b)) for b in range(2 * d)] for g in grad]


# --- evaluation --------------------------------------------------------------

_NUMPY_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt}


def compile_expr(e: Expr, d: int, bindings: Mapping[str, float] | None = None):
    """Turn ``e`` into a closure ``f(point)`` with parameters frozen in.

    Variable-free subtrees are folded to numbers up front, so the closure
    returns a plain float when ``e`` is constant.
    """
    bindings = dict(bindings or {})
    missing = parameters(e) - bindings.keys()
    if missing:
        raise EvaluationError(f"unbound parameter(s): {', '.join(sorted(missing))}")
    return _compile(e, d, bindings)


def _compile(e: Expr, d: int, b: Mapping[str, float]):
    if is_constant(e):
        with np.errstate(all="ignore"):
            value = float(_constant_value(e, b))
        if not np.isfinite(value):
            raise EvaluationError(f"non-finite constant {to_text(e)}")
        return lambda pt: value
    if isinstance(e, Var):
        if e.index > d:
            raise EvaluationError(f"variable {e} exceeds dimension d={d}")
        i = e.flat(d)
        return lambda pt: pt[..., i]
    if isinstance(e, Neg):
        f = _compile(e.arg, d, b)
        return lambda pt: -f(pt)
    if isinstance(e, BinOp):
        f, g = _compile(e.left, d, b), _compile(e.right, d, b)
        if e.op == "+":
            return lambda pt: f(pt) + g(pt)
        if e.op == "-":
            return lambda pt: f(pt) - g(pt)
        if e.op == "*":
            return lambda pt: f(pt) * g(pt)
        if is_constant(e.right) and _constant_value(e.right, b) == 0:
            raise EvaluationError(f"division by zero in {to_text(e)}")
        return lambda pt: f(pt) / g(pt)
    if isinstance(e, Pow):
        f, n = _compile(e.base, d, b), e.exponent
        return lambda pt: f(pt) ** n
    f, fn = _compile(e.arg, d, b), _NUMPY_FUNCS[e.name]
    return lambda pt: fn(f(pt))


def _constant_value(e: Expr, b: Mapping[str, float]) -> float:
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Param):
        return float(b[e.name])
    if isinstance(e, Neg):
        return -_constant_value(e.arg, b)
    if isinstance(e, BinOp):
        left, right = _constant_value(e.left, b), _constant_value(e.right, b)
        if e.op == "+":
            return left + right
        if e.op == "-":
            return left - right
        if e.op == "*":
            return left * right
        if right == 0:
            raise EvaluationError(f"division by zero in {to_text(e)}")
        return left / right
    if isinstance(e, Pow):
        return _constant_value(e.base, b) ** e.exponent
    return float(_NUMPY_FUNCS[e.name](_constant_value(e.arg, b)))


def evaluate(e: Expr, point, bindings: Mapping[str, float] | None = None):
    """Evaluate ``e`` at ``point`` (shape ``(..., 2d)``).

    Returns a float for a single point, an array over the batch axes
    otherwise. Raises :class:`EvaluationError` for unbound parameters,
    division by zero or a non-finite result.
    """
    pt = np.asarray(point, dtype=float)
    f = compile_expr(e, pt.shape[-1] // 2, bindings)
    with np.errstate(all="ignore"):
        value = np.broadcast_to(np.asarray(f(pt), dtype=float), pt.shape[:-1])
    if not np.all(np.isfinite(value)):
        raise EvaluationError(f"non-finite value while evaluating {to_text(e)}")
    return float(value) if value.ndim == 0 else np.array(value)


# --- polynomial conversion ---------------------------------------------------


def to_polynomial(e: Expr, d: int, bindings: Mapping[str, float] | None = None) -> dict[tuple[int, ...], float]:
    """Expand ``e`` into ``{multi-index: coefficient}`` over the ``2d`` variables.

    Raises :class:`NonPolynomialError` if a function is applied to a
    variable-dependent argument.
    """
    bindings = dict(bindings or {})
    missing = parameters(e) - bindings.keys()
    if missing:
        raise EvaluationError(f"unbound parameter(s): {', '.join(sorted(missing))}")
    poly = _poly(e, d, bindings)
    return {k: v for k, v in poly.items() if v != 0.0}


def _poly_mul(p: dict, q: dict) -> dict:
    out: dict = {}
    for k1, c1 in p.items():
        for k2, c2 in q.items():
            k = tuple(a + b for a, b in zip(k1, k2))
            out[k] = out.get(k, 0.0) + c1 * c2
    return out


def _poly_add(p: dict, q: dict, sign: float = 1.0) -> dict:
    out = dict(p)
    for k, c in q.items():
        out[k] = out.get(k, 0.0) + sign * c
    return out


def _poly(e: Expr, d: int, b: Mapping[str, float]) -> dict:
    zero_idx = (0,) * (2 * d)
    if is_constant(e):
        return {zero_idx: float(_constant_value(e, b))}
    if isinstance(e, Var):
        k = [0] * (2 * d)
        k[e.flat(d)] = 1
        return {tuple(k): 1.0}
    if isinstance(e, Neg):
        return {k: -c for k, c in _poly(e.arg, d, b).items()}
    if isinstance(e, BinOp):
        left = _poly(e.left, d, b)
        if e.op == "/":
            divisor = _constant_value(e.right, b)
            if divisor == 0:
                raise EvaluationError(f"division by zero in {to_text(e)}")
            return {k: c / divisor for k, c in left.items()}
        right = _poly(e.right, d, b)
        if e.op == "*":
            return _poly_mul(left, right)
        return _poly_add(left, right, 1.0 if e.op == "+" else -1.0)
    if isinstance(e, Pow):
        base = _poly(e.base, d, b)
        return reduce(_poly_mul, [base] * e.exponent, {zero_idx: 1.0})
    raise NonPolynomialError(f"{e.name}() of a phase-space variable is not a polynomial")


__all__ = [
    "BinOp",
    "ComplexSymbol",
    "Const",
    "EvaluationError",
    "Expr",
    "Func",
    "Neg",
    "NonPolynomialError",
    "Param",
    "Pow",
    "SymbolError",
    "SymbolSyntaxError",
    "Var",
    "compile_expr",
    "differentiate",
    "evaluate",
    "free_variables",
    "gradient",
    "hessian",
    "is_constant",
    "parameters",
    "parse",
    "to_polynomial",
    "to_text",
    "variable",
]
