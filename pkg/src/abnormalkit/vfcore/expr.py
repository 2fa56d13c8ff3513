"""Small arithmetic expression language for user supplied vector fields.

Grammar (variables are ``x1 .. xn``, 1-based)::

    expr  := term (("+" | "-") term)*
    term  := unary (("*" | "/") unary)*
    unary := "-" unary | atom
    atom  := number | "pi" | var | func "(" expr ")" | "(" expr ")"
    func  := "sin" | "cos" | "exp" | "sqrt"

Expressions are immutable trees. They evaluate on floats, numpy arrays or
duals, differentiate symbolically, and print canonically so that
``parse(str(e)) == e``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class ExprError(ValueError):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, text: str, position: int):
        super().__init__(f"{message} at position {position}: {text!r}")
        self.text = text
        self.position = position


class UnknownIdentifierError(ExprError):
    def __init__(self, name: str, position: int):
        super().__init__(f"unknown identifier {name!r} at position {position}")
        self.name = name
        self.position = position


class VariableIndexError(ExprError):
    def __init__(self, name: str, dim: int):
        super().__init__(f"variable {name} is out of range for dimension {dim}")
        self.name = name
        self.dim = dim


FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt}

# binding strength used by the printer
_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_ATOM = 1, 2, 3, 4


class Expr:
    prec = _PREC_ATOM

    def eval(self, x):
        raise NotImplementedError

    def diff(self, index: int) -> "Expr":
        """Partial derivative w.r.t. the 0-based variable ``index``."""
        raise NotImplementedError

    def variables(self) -> set[int]:
        return set()

    def __str__(self) -> str:
        return self.render()

    def render(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True, eq=True)
class Num(Expr):
    value: float

    def eval(self, x):
        return self.value

    def diff(self, index):
        return ZERO

    def render(self):
        if self.value == math.pi:
            return "pi"
        return repr(float(self.value))


@dataclass(frozen=True, eq=True)
class Var(Expr):
    index: int  # 0-based

    def eval(self, x):
        return x[self.index]

    def diff(self, index):
        return ONE if index == self.index else ZERO

    def variables(self):
        return {self.index}

    def render(self):
        return f"x{self.index + 1}"


@dataclass(frozen=True, eq=True)
class Neg(Expr):
    arg: Expr
    prec = _PREC_NEG

    def eval(self, x):
        return -self.arg.eval(x)

    def diff(self, index):
        return neg(self.arg.diff(index))

    def variables(self):
        return self.arg.variables()

    def render(self):
        inner = self.arg.render()
        return "-" + (f"({inner})" if self.arg.prec < _PREC_NEG else inner)


@dataclass(frozen=True, eq=True)
class Bin(Expr):
    op: str
    left: Expr
    right: Expr

    @property
    def prec(self):
        return _PREC_ADD if self.op in "+-" else _PREC_MUL

    def eval(self, x):
        a = self.left.eval(x)
        b = self.right.eval(x)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        return a / b

    def diff(self, index):
        a, b = self.left, self.right
        da, db = a.diff(index), b.diff(index)
        if self.op == "+":
            return add(da, db)
        if self.op == "-":
            return sub(da, db)
        if self.op == "*":
            return add(mul(da, b), mul(a, db))
        # quotient rule written as da/b - a*db/b^2
        return sub(div(da, b), div(mul(a, db), mul(b, b)))

    def variables(self):
        return self.left.variables() | self.right.variables()

    def render(self):
        p = self.prec
        left = self.left.render()
        if self.left.prec < p:
            left = f"({left})"
        right = self.right.render()
        # right operand of - and / needs parens at equal precedence as well
        if self.right.prec < p or (self.right.prec == p and self.op in "-/"):
            right = f"({right})"
        return f"{left} {self.op} {right}"


@dataclass(frozen=True, eq=True)
class Call(Expr):
    func: str
    arg: Expr

    def eval(self, x):
        return FUNCTIONS[self.func](self.arg.eval(x))

    def diff(self, index):
        da = self.arg.diff(index)
        if da == ZERO:
            return ZERO
        if self.func == "sin":
            outer = Call("cos", self.arg)
        elif self.func == "cos":
            outer = neg(Call("sin", self.arg))
        elif self.func == "exp":
            outer = self
        else:
            outer = div(Num(0.5), self)
        return mul(outer, da)

    def variables(self):
        return self.arg.variables()

    def render(self):
        return f"{self.func}({self.arg.render()})"


ZERO = Num(0.0)
ONE = Num(1.0)


# constructors with trivial folding, keeps derivative trees readable
def neg(a: Expr) -> Expr:
    if a == ZERO:
        return ZERO
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def add(a: Expr, b: Expr) -> Expr:
    if a == ZERO:
        return b
    if b == ZERO:
        return a
    return Bin("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if b == ZERO:
        return a
    if a == ZERO:
        return neg(b)
    if isinstance(b, Neg):
        return add(a, b.arg)
    return Bin("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if a == ZERO or b == ZERO:
        return ZERO
    if a == ONE:
        return b
    if b == ONE:
        return a
    return Bin("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if a == ZERO:
        return ZERO
    if b == ONE:
        return a
    return Bin("/", a, b)


_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/(),]))"
)


def _tokenize(text: str):
    pos = 0
    tokens = []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExprSyntaxError(f"unexpected character {text[bad]!r}", text, bad)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, dim: int | None):
        self.text = text
        self.dim = dim
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.take()
        if val != value:
            what = "end of input" if kind == "end" else repr(val)
            raise ExprSyntaxError(f"expected {value!r}, found {what}", self.text, pos)

    def parse(self) -> Expr:
        e = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {val!r}", self.text, pos)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            e = Bin(op, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            e = Bin(op, e, self.unary())
        return e

    def unary(self) -> Expr:
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return Neg(self.unary())
        return self.atom()

    def atom(self) -> Expr:
        kind, val, pos = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "name":
            if val == "pi":
                return Num(math.pi)
            if val in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(val, arg)
            m = re.fullmatch(r"x(\d+)", val)
            if m:
                k = int(m.group(1))
                if k < 1 or (self.dim is not None and k > self.dim):
                    raise VariableIndexError(val, self.dim if self.dim is not None else 0)
                return Var(k - 1)
            raise UnknownIdentifierError(val, pos)
        if val == "(":
            e = self.expr()
            self.expect(")")
            return e
        what = "end of input" if kind == "end" else repr(val)
        raise ExprSyntaxError(f"unexpected {what}", self.text, pos)


def parse(text: str, dim: int | None = None) -> Expr:
    """Parse one scalar expression; ``dim`` bounds the admissible variables."""
    return _Parser(text, dim).parse()


def _split_top_level(text: str) -> list[str]:
    parts, depth, start = [], 0, 0
    for i, ch in enumerate(text):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == "," and depth == 0:
            parts.append(text[start:i])
            start = i + 1
    parts.append(text[start:])
    return parts


@dataclass(frozen=True)
class FieldExpr:
    """A vector field given componentwise by expressions in ``x1..xn``."""

    components: tuple[Expr, ...]
    dim: int

    def __call__(self, x):
        return [c.eval(x) for c in self.components]

    def partial(self, index: int) -> "FieldExpr":
        return FieldExpr(tuple(c.diff(index) for c in self.components), self.dim)

    def __str__(self):
        return ", ".join(c.render() for c in self.components)


def parse_field(source: str | Sequence[str], dim: int) -> FieldExpr:
    """Parse a field from a comma separated string or a list of component strings."""
    texts = _split_top_level(source) if isinstance(source, str) else list(source)
    if len(texts) != dim:
        raise ExprError(f"field has {len(texts)} components, expected {dim}")
    return FieldExpr(tuple(parse(t, dim) for t in texts), dim)
