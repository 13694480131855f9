"""Scalar expressions in coordinates x^mu and Plücker symbols d[I].

Grammar::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ['^' ['-'] number]
    atom   := number | name | 'x' int | 'd[' int (',' int)* ']'
            | 'sqrt(' expr ')' | 'abs(' expr ')' | '(' expr ')'

Unary minus binds looser than ``^`` so ``-x0^2`` means ``-(x0^2)``.

Evaluation is vectorised over numpy arrays and carries exact first
derivatives (forward mode with a sparse tangent per active symbol).
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .multivector import MultiIndex, PluckerVector, check_index


class ExprError(ValueError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{message} (line {line}, column {col})")
        self.line = line
        self.col = col


class EvaluationError(ArithmeticError):
    """Raised at a singular point; ``where`` holds the flat indices of bad samples."""

    def __init__(self, reason: str, where=None):
        self.reason = reason
        self.where = np.atleast_1d(where) if where is not None else np.array([], dtype=int)
        super().__init__(reason)


# ---------------------------------------------------------------- nodes

class Expression:
    """Base class of expression nodes; nodes are immutable and compare structurally."""

    __slots__ = ()

    def __add__(self, other):
        return Add(self, as_expr(other))

    def __radd__(self, other):
        return Add(as_expr(other), self)

    def __sub__(self, other):
        return Sub(self, as_expr(other))

    def __rsub__(self, other):
        return Sub(as_expr(other), self)

    def __mul__(self, other):
        return Mul(self, as_expr(other))

    def __rmul__(self, other):
        return Mul(as_expr(other), self)

    def __truediv__(self, other):
        return Div(self, as_expr(other))

    def __rtruediv__(self, other):
        return Div(as_expr(other), self)

    def __pow__(self, exponent):
        return Pow(self, float(exponent))

    def __neg__(self):
        return Neg(self)

    def __str__(self):
        return to_text(self)

    def children(self) -> tuple["Expression", ...]:
        return ()

    def walk(self):
        yield self
        for c in self.children():
            yield from c.walk()

    @property
    def coords(self) -> tuple[int, ...]:
        return tuple(sorted({n.index for n in self.walk() if isinstance(n, Coord)}))

    @property
    def pluckers(self) -> tuple[MultiIndex, ...]:
        return tuple(sorted({n.indices for n in self.walk() if isinstance(n, Plucker)}))

    @property
    def params(self) -> tuple[str, ...]:
        return tuple(sorted({n.name for n in self.walk() if isinstance(n, Param)}))

    def map(self, fn: Callable[["Expression"], "Expression | None"]) -> "Expression":
        """Bottom-up rewrite: ``fn`` may return a replacement node or None."""
        rebuilt = self._rebuild([c.map(fn) for c in self.children()])
        out = fn(rebuilt)
        return rebuilt if out is None else out

    def _rebuild(self, kids):
        return self


@dataclass(frozen=True, eq=True)
class Const(Expression):
    value: float


@dataclass(frozen=True, eq=True)
class Param(Expression):
    name: str


@dataclass(frozen=True, eq=True)
class Coord(Expression):
    index: int


@dataclass(frozen=True, eq=True)
class Plucker(Expression):
    indices: MultiIndex


@dataclass(frozen=True, eq=True)
class Neg(Expression):
    arg: Expression

    def children(self):
        return (self.arg,)

    def _rebuild(self, kids):
        return Neg(*kids)


@dataclass(frozen=True, eq=True)
class Sqrt(Expression):
    arg: Expression

    def children(self):
        return (self.arg,)

    def _rebuild(self, kids):
        return Sqrt(*kids)


@dataclass(frozen=True, eq=True)
class Abs(Expression):
    arg: Expression

    def children(self):
        return (self.arg,)

    def _rebuild(self, kids):
        return Abs(*kids)


@dataclass(frozen=True, eq=True)
class Pow(Expression):
    base: Expression
    exponent: float

    def children(self):
        return (self.base,)

    def _rebuild(self, kids):
        return Pow(kids[0], self.exponent)


@dataclass(frozen=True, eq=True)
class _Binary(Expression):
    left: Expression
    right: Expression

    def children(self):
        return (self.left, self.right)

    def _rebuild(self, kids):
        return type(self)(*kids)


class Add(_Binary):
    pass


class Sub(_Binary):
    pass


class Mul(_Binary):
    pass


class Div(_Binary):
    pass


def as_expr(value) -> Expression:
    if isinstance(value, Expression):
        return value
    if isinstance(value, (int, float, np.floating, np.integer)):
        return Const(float(value))
    raise TypeError(f"cannot convert {value!r} to an expression")


def x(i: int) -> Coord:
    return Coord(int(i))


def d(*raw: int) -> Expression:
    """Plücker symbol for a raw (possibly unsorted) index tuple, with its sign."""
    from .multivector import sort_index

    idx, sign = sort_index(raw)
    if sign == 0:
        return Const(0.0)
    node = Plucker(idx)
    return node if sign > 0 else Neg(node)


def sqrt(e) -> Sqrt:
    return Sqrt(as_expr(e))


def absolute(e) -> Abs:
    return Abs(as_expr(e))


# ---------------------------------------------------------------- printing

_PREC_ATOM, _PREC_POW, _PREC_UNARY, _PREC_MUL, _PREC_ADD = 5, 4, 3, 2, 1


def _prec(e: Expression) -> int:
    if isinstance(e, (Add, Sub)):
        return _PREC_ADD
    if isinstance(e, (Mul, Div)):
        return _PREC_MUL
    if isinstance(e, Neg):
        return _PREC_UNARY
    if isinstance(e, Const) and (e.value < 0 or math.copysign(1.0, e.value) < 0):
        return _PREC_UNARY
    if isinstance(e, Pow):
        return _PREC_POW
    return _PREC_ATOM


def _num(v: float) -> str:
    if not math.isfinite(v):
        raise ExprError(f"cannot print non-finite constant {v}")
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v)) if v != 0 or math.copysign(1.0, v) > 0 else "-0.0"
    return repr(v)


def to_text(e: Expression) -> str:
    """Render ``e`` in the grammar; reparsing gives a structurally equal tree."""

    def wrap(child, need):
        s = to_text(child)
        return f"({s})" if _prec(child) < need else s

    if isinstance(e, Const):
        return _num(e.value)
    if isinstance(e, Param):
        return e.name
    if isinstance(e, Coord):
        return f"x{e.index}"
    if isinstance(e, Plucker):
        return "d[" + ",".join(str(i) for i in e.indices) + "]"
    if isinstance(e, Sqrt):
        return f"sqrt({to_text(e.arg)})"
    if isinstance(e, Abs):
        return f"abs({to_text(e.arg)})"
    if isinstance(e, Neg):
        a = e.arg
        if isinstance(a, Const) and _prec(a) == _PREC_ATOM:
            return f"-({to_text(a)})"
        return "-" + wrap(a, _PREC_UNARY)
    if isinstance(e, Pow):
        return f"{wrap(e.base, _PREC_ATOM)}^{_num(e.exponent)}"
    ops = {Add: "+", Sub: "-", Mul: "*", Div: "/"}
    op = ops[type(e)]
    if op in "+-":
        return f"{wrap(e.left, _PREC_ADD)} {op} {wrap(e.right, _PREC_MUL)}"
    return f"{wrap(e.left, _PREC_MUL)}{op}{wrap(e.right, _PREC_UNARY)}"


# ---------------------------------------------------------------- parsing

_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/^(),\[\]])
""", re.VERBOSE)

_FUNCS = {"sqrt": Sqrt, "abs": Abs}


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks, pos, line, line_start = [], 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line, line_start = line + 1, m.end()
        elif kind != "ws":
            toks.append(_Tok(kind, m.group(), line, m.start() - line_start + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


@dataclass(frozen=True)
class ParseContext:
    """Symbol table for parsing: dimensions, parameter names, coordinate aliases."""

    N: int
    n: int
    params: frozenset = frozenset()
    coord_names: Mapping[str, int] = field(default_factory=dict)


class _Parser:
    def __init__(self, text: str, ctx: ParseContext):
        self.toks = _tokenize(text)
        self.i = 0
        self.ctx = ctx

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def error(self, msg, tok=None):
        tok = tok or self.tok
        return ExprSyntaxError(msg, tok.line, tok.col)

    def accept(self, text) -> bool:
        if self.tok.kind == "op" and self.tok.text == text:
            self.i += 1
            return True
        return False

    def expect(self, text):
        if not self.accept(text):
            found = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}")

    def parse(self) -> Expression:
        e = self.expr()
        if self.tok.kind != "eof":
            raise self.error(f"unexpected {self.tok.text!r}")
        return e

    def expr(self):
        e = self.term()
        while True:
            if self.accept("+"):
                e = Add(e, self.term())
            elif self.accept("-"):
                e = Sub(e, self.term())
            else:
                return e

    def term(self):
        e = self.unary()
        while True:
            if self.accept("*"):
                e = Mul(e, self.unary())
            elif self.accept("/"):
                e = Div(e, self.unary())
            else:
                return e

    def unary(self):
        if self.accept("-"):
            nxt, after = self.tok, self.toks[self.i + 1]
            if nxt.kind == "num" and not (after.kind == "op" and after.text == "^"):
                self.i += 1
                return Const(-float(nxt.text))
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.accept("^"):
            sign = -1.0 if self.accept("-") else 1.0
            if self.tok.kind != "num":
                raise self.error("exponent must be a numeric constant")
            exp = sign * float(self.tok.text)
            self.i += 1
            return Pow(base, exp)
        return base

    def atom(self):
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return Const(float(tok.text))
        if tok.kind == "op" and tok.text == "(":
            self.i += 1
            e = self.expr()
            self.expect(")")
            return e
        if tok.kind != "name":
            raise self.error(f"unexpected {tok.text or 'end of input'!r}")
        self.i += 1
        name = tok.text
        if name in _FUNCS and self.tok.text == "(":
            self.i += 1
            e = self.expr()
            self.expect(")")
            return _FUNCS[name](e)
        if name == "d" and self.tok.text == "[":
            return self.plucker(tok)
        if name in self.ctx.coord_names:
            return Coord(self.ctx.coord_names[name])
        m = re.fullmatch(r"x(\d+)", name)
        if m:
            i = int(m.group(1))
            if i > self.ctx.N:
                raise self.error(f"coordinate x{i} out of range [0, {self.ctx.N}]", tok)
            return Coord(i)
        if name in self.ctx.params:
            return Param(name)
        raise self.error(f"unknown symbol {name!r}", tok)

    def plucker(self, start):
        self.expect("[")
        idx = []
        while True:
            if self.tok.kind != "num" or not self.tok.text.isdigit():
                raise self.error("Plücker index must be a non-negative integer")
            idx.append(int(self.tok.text))
            self.i += 1
            if self.accept("]"):
                break
            self.expect(",")
        try:
            idx = check_index(idx, self.ctx.N, self.ctx.n + 1)
        except ValueError as exc:
            raise ExprSyntaxError(f"malformed index: {exc}", start.line, start.col) from None
        return Plucker(idx)


def parse(text: str, N: int, n: int, params: Iterable[str] = (), coord_names=None) -> Expression:
    """Parse ``text`` for an (N+1)-coordinate chart carrying (n+1)-vectors."""
    ctx = ParseContext(N, n, frozenset(params), dict(coord_names or {}))
    return _Parser(text, ctx).parse()


# ---------------------------------------------------------------- evaluation

def _bad(mask):
    mask = np.atleast_1d(mask)
    if mask.any():
        return np.flatnonzero(mask)
    return None


def _combine(ga: dict, gb: dict, ca, cb) -> dict:
    """ca * ga + cb * gb for sparse tangent dicts (coefficients may be None)."""
    out = {}
    if ca is not None:
        for k, v in ga.items():
            out[k] = ca * v
    if cb is not None:
        for k, v in gb.items():
            out[k] = out[k] + cb * v if k in out else cb * v
    return out


class _Evaluator:
    def __init__(self, x, d, params, grad):
        self.x = x
        self.d = d
        self.params = params
        self.grad = grad

    def __call__(self, e):
        t = type(e)
        if t is Const:
            return e.value, {}
        if t is Coord:
            return self.x[e.index], ({e.index: 1.0} if self.grad else {})
        if t is Plucker:
            try:
                val = self.d[e.indices]
            except KeyError:
                raise ExprError(f"unbound Plücker symbol d{list(e.indices)}") from None
            return val, ({e.indices: 1.0} if self.grad else {})
        if t is Param:
            try:
                return self.params[e.name], {}
            except KeyError:
                raise ExprError(f"unbound parameter {e.name!r}") from None
        if t is Neg:
            v, g = self(e.arg)
            return -v, {k: -w for k, w in g.items()}
        if t is Add or t is Sub:
            va, ga = self(e.left)
            vb, gb = self(e.right)
            if t is Add:
                return va + vb, _combine(ga, gb, 1.0, 1.0)
            return va - vb, _combine(ga, gb, 1.0, -1.0)
        if t is Mul:
            va, ga = self(e.left)
            vb, gb = self(e.right)
            return va * vb, _combine(ga, gb, vb, va)
        if t is Div:
            va, ga = self(e.left)
            vb, gb = self(e.right)
            where = _bad(np.asarray(vb) == 0)
            if where is not None:
                raise EvaluationError("zero denominator", where)
            q = va / vb
            return q, _combine(ga, gb, 1.0 / vb, -q / vb)
        if t is Sqrt:
            v, g = self(e.arg)
            where = _bad(np.asarray(v) < 0)
            if where is not None:
                raise EvaluationError("negative sqrt argument", where)
            r = np.sqrt(v)
            if g:
                where = _bad(np.asarray(v) == 0)
                if where is not None:
                    raise EvaluationError("zero sqrt argument", where)
                return r, _combine(g, {}, 0.5 / r, None)
            return r, {}
        if t is Abs:
            v, g = self(e.arg)
            return np.abs(v), _combine(g, {}, np.sign(v), None)
        if t is Pow:
            v, g = self(e.base)
            p = e.exponent
            arr = np.asarray(v)
            if p != int(p):
                where = _bad(arr < 0)
                if where is not None:
                    raise EvaluationError("negative base with fractional exponent", where)
            if p < 0 or (g and p < 1 and p != 0):
                where = _bad(arr == 0)
                if where is not None:
                    raise EvaluationError("zero base with non-positive power", where)
            if p == int(p):
                ip = int(p)
                val = v ** ip if ip >= 0 else 1.0 / v ** (-ip)
                if not g or ip == 0:
                    return val, {}
                dv = ip * (v ** (ip - 1) if ip >= 1 else 1.0 / v ** (1 - ip))
                return val, _combine(g, {}, dv, None)
            val = np.power(v, p)
            return val, (_combine(g, {}, p * np.power(v, p - 1), None) if g else {})
        raise TypeError(f"unknown node {e!r}")


def evaluate(e: Expression, x, d: Mapping, params: Mapping | None = None, grad: bool = True):
    """Evaluate ``e`` at (batched) points.

    ``x`` is indexable by coordinate (rows of an array of shape (N+1, ...)),
    ``d`` maps sorted multi-indices to component values.  Returns the value
    and a dict symbol -> derivative; only symbols reached in the tree appear.
    """
    with np.errstate(all="ignore"):
        val, g = _Evaluator(x, d, params or {}, grad)(e)
    shape = np.shape(val)
    for k, v in g.items():
        if np.shape(v) != shape:
            g[k] = np.broadcast_to(v, shape).astype(float)
    return val, g


@dataclass(frozen=True)
class EvalPoint:
    x: np.ndarray
    dx: PluckerVector
    params: Mapping[str, float] = field(default_factory=dict)


def eval_with_gradient(e: Expression, p: EvalPoint):
    """Value, d/dx^mu (length N+1) and d/dd[I] (PluckerVector) of ``e`` at ``p``."""
    xv = np.asarray(p.x, dtype=float)
    comps = dict(p.dx.components)
    for idx in e.pluckers:
        comps.setdefault(idx, 0.0)
    val, g = evaluate(e, xv, comps, p.params)
    grad_x = np.zeros(len(xv))
    grad_d = {}
    for k, v in g.items():
        if isinstance(k, tuple):
            grad_d[k] = float(v)
        else:
            grad_x[k] = float(v)
    return float(val), grad_x, PluckerVector(p.dx.N, p.dx.degree, grad_d)


def simplify_const(e: Expression) -> Expression:
    """Drop additive zeros and multiplicative ones/zeros created by ``diff``."""

    def rule(node):
        zero = lambda n: isinstance(n, Const) and n.value == 0.0
        one = lambda n: isinstance(n, Const) and n.value == 1.0
        if isinstance(node, Add):
            if zero(node.left):
                return node.right
            if zero(node.right):
                return node.left
        if isinstance(node, Sub):
            if zero(node.right):
                return node.left
            if zero(node.left):
                return Neg(node.right)
        if isinstance(node, Mul):
            if zero(node.left) or zero(node.right):
                return Const(0.0)
            if one(node.left):
                return node.right
            if one(node.right):
                return node.left
        if isinstance(node, Div) and zero(node.left):
            return Const(0.0)
        if isinstance(node, Neg) and zero(node.arg):
            return Const(0.0)
        return None

    return e.map(rule)


def diff(e: Expression, wrt) -> Expression:
    """Symbolic partial derivative (first order only).

    ``wrt`` is a coordinate number or a sorted multi-index naming d[I].
    """
    wrt = tuple(int(i) for i in wrt) if isinstance(wrt, (tuple, list)) else int(wrt)

    def go(n: Expression) -> Expression:
        t = type(n)
        if t in (Const, Param):
            return Const(0.0)
        if t is Coord:
            return Const(1.0 if n.index == wrt else 0.0)
        if t is Plucker:
            return Const(1.0 if n.indices == wrt else 0.0)
        if t is Neg:
            return Neg(go(n.arg))
        if t is Add:
            return Add(go(n.left), go(n.right))
        if t is Sub:
            return Sub(go(n.left), go(n.right))
        if t is Mul:
            return Add(Mul(go(n.left), n.right), Mul(n.left, go(n.right)))
        if t is Div:
            return Sub(Div(go(n.left), n.right),
                       Div(Mul(n.left, go(n.right)), Pow(n.right, 2.0)))
        if t is Sqrt:
            return Div(go(n.arg), Mul(Const(2.0), n))
        if t is Abs:
            raise ExprError("abs() is not symbolically differentiable")
        if t is Pow:
            return Mul(Mul(Const(n.exponent), Pow(n.base, n.exponent - 1.0)), go(n.base))
        raise TypeError(f"unknown node {n!r}")

    return simplify_const(go(e))
