"""A small arithmetic expression language with forward-mode differentiation.

Grammar (EBNF)::

    expr    = term   { ("+" | "-") term } ;
    term    = unary  { ("*" | "/") unary } ;
    unary   = "-" unary | power ;
    power   = atom [ "^" unary ] ;                 (* right-associative *)
    atom    = number | name | name "(" expr { "," expr } ")" | "(" expr ")" ;
    number  = digits [ "." digits ] [ ("e" | "E") [ "+" | "-" ] digits ]
            | "." digits [ exponent ] ;
    name    = x1 .. xn | u1 .. uk | function name ;

Functions: sin cos exp log sqrt tanh abs (one argument) and pow (two).
``^`` binds tighter than unary minus, so ``-x1^2`` is ``-(x1^2)``.

Errors carry a byte offset and render as ``line:col: message``.

Evaluation works elementwise on numpy arrays, so one parse serves a whole
batch of states. Derivatives come from :class:`Dual`; nesting a Dual inside
a Dual gives Hessians.
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MAX_DEPTH = 256
UNARY_FUNCS = ("sin", "cos", "exp", "log", "sqrt", "tanh", "abs")
BINARY_FUNCS = ("pow",)


class ExprError(ValueError):
    """Base error; ``offset`` is a byte offset into ``source``."""

    def __init__(self, message: str, source: str = "", offset: int = 0):
        self.message = message
        self.source = source
        self.offset = offset
        line, col = _line_col(source, offset)
        self.line, self.col = line, col
        super().__init__(f"{line}:{col}: {message}")


class ExprSyntaxError(ExprError):
    pass


class UnknownIdentifier(ExprError):
    pass


class DimensionError(ExprError):
    pass


class ExprDomainError(ExprError):
    pass


def _line_col(source: str, offset: int) -> tuple[int, int]:
    head = source.encode("utf-8")[:offset].decode("utf-8", errors="ignore")
    line = head.count("\n") + 1
    col = offset - (head.rfind("\n") + 1 if "\n" in head else 0) + 1
    return line, col


# ---------------------------------------------------------------- AST


@dataclass(frozen=True)
class Num:
    value: float
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Var:
    name: str  # "x" or "u"
    index: int  # zero-based
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Neg:
    operand: "Expr"
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple
    pos: int = field(default=0, compare=False)


Expr = Num | Var | Neg | BinOp | Call


# ---------------------------------------------------------------- parser

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(src: str):
    toks = []
    i = 0
    while i < len(src):
        if src[i].isspace():
            i += 1
            continue
        m = _TOKEN.match(src, i)
        if m is None or m.end() == i:
            raise ExprSyntaxError(f"unexpected character {src[i]!r}", src, _byte(src, i))
        kind = m.lastgroup
        start = m.start(kind)
        toks.append((kind, m.group(kind), _byte(src, start)))
        i = m.end()
    toks.append(("end", "", _byte(src, len(src))))
    return toks


def _byte(src: str, i: int) -> int:
    return len(src[:i].encode("utf-8"))


class _Parser:
    def __init__(self, src: str, n: int, k: int):
        self.src, self.n, self.k = src, n, k
        self.toks = _tokenize(src)
        self.i = 0
        self.depth = 0

    @property
    def tok(self):
        return self.toks[self.i]

    def fail(self, expected: str):
        kind, text, pos = self.tok
        got = "end of input" if kind == "end" else repr(text)
        raise ExprSyntaxError(f"expected {expected}, got {got}", self.src, pos)

    def eat(self, text: str) -> bool:
        if self.tok[0] == "op" and self.tok[1] == text:
            self.i += 1
            return True
        return False

    def enter(self):
        self.depth += 1
        if self.depth > MAX_DEPTH:
            raise ExprSyntaxError(f"expression nesting exceeds {MAX_DEPTH}", self.src, self.tok[2])

    def parse(self) -> Expr:
        e = self.expr()
        if self.tok[0] != "end":
            self.fail("operator or end of input")
        return e

    def expr(self) -> Expr:
        self.enter()
        left = self.term()
        while self.tok[0] == "op" and self.tok[1] in "+-":
            op, pos = self.tok[1], self.tok[2]
            self.i += 1
            left = BinOp(op, left, self.term(), pos)
        self.depth -= 1
        return left

    def term(self) -> Expr:
        left = self.unary()
        while self.tok[0] == "op" and self.tok[1] in "*/":
            op, pos = self.tok[1], self.tok[2]
            self.i += 1
            left = BinOp(op, left, self.unary(), pos)
        return left

    def unary(self) -> Expr:
        if self.tok[0] == "op" and self.tok[1] == "-":
            pos = self.tok[2]
            self.i += 1
            self.enter()
            out = Neg(self.unary(), pos)
            self.depth -= 1
            return out
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.tok[0] == "op" and self.tok[1] == "^":
            pos = self.tok[2]
            self.i += 1
            self.enter()
            out = BinOp("^", base, self.unary(), pos)
            self.depth -= 1
            return out
        return base

    def atom(self) -> Expr:
        kind, text, pos = self.tok
        if kind == "num":
            self.i += 1
            return Num(float(text), pos)
        if kind == "name":
            self.i += 1
            if text in UNARY_FUNCS or text in BINARY_FUNCS:
                if not self.eat("("):
                    self.fail("'(' after function name")
                args = [self.expr()]
                while self.eat(","):
                    args.append(self.expr())
                if not self.eat(")"):
                    self.fail("',' or ')'")
                arity = 2 if text in BINARY_FUNCS else 1
                if len(args) != arity:
                    raise ExprSyntaxError(f"{text} takes {arity} argument(s), got {len(args)}",
                                          self.src, pos)
                return Call(text, tuple(args), pos)
            m = re.fullmatch(r"([xu])([1-9]\d*)", text)
            if m is None:
                raise UnknownIdentifier(f"unknown identifier {text!r}", self.src, pos)
            name, idx = m.group(1), int(m.group(2))
            limit = self.n if name == "x" else self.k
            if idx > limit:
                raise UnknownIdentifier(
                    f"unknown identifier {text!r} ({name} has dimension {limit})", self.src, pos)
            return Var(name, idx - 1, pos)
        if self.eat("("):
            e = self.expr()
            if not self.eat(")"):
                self.fail("')'")
            return e
        self.fail("number, identifier or '('")


def parse(source: str, n: int, k: int = 0) -> Expr:
    """Parse ``source`` over variables x1..xn and u1..uk."""
    if not source or not source.strip():
        raise ExprSyntaxError("empty expression", source or "", 0)
    # about five parser frames per nesting level
    old = sys.getrecursionlimit()
    sys.setrecursionlimit(old + 8 * MAX_DEPTH)
    try:
        return _Parser(source, n, k).parse()
    finally:
        sys.setrecursionlimit(old)


def to_source(e: Expr) -> str:
    """Fully parenthesised source; ``parse(to_source(e)) == e``."""
    if isinstance(e, Num):
        return repr(float(e.value))
    if isinstance(e, Var):
        return f"{e.name}{e.index + 1}"
    if isinstance(e, Neg):
        return f"(-{to_source(e.operand)})"
    if isinstance(e, BinOp):
        return f"({to_source(e.left)} {e.op} {to_source(e.right)})"
    return f"{e.fn}({', '.join(to_source(a) for a in e.args)})"


def contains_call(e: Expr, fn: str) -> bool:
    if isinstance(e, Call):
        return e.fn == fn or any(contains_call(a, fn) for a in e.args)
    if isinstance(e, Neg):
        return contains_call(e.operand, fn)
    if isinstance(e, BinOp):
        return contains_call(e.left, fn) or contains_call(e.right, fn)
    return False


def max_index(e: Expr, name: str) -> int:
    """Largest referenced (one-based) index of variable family ``name``."""
    if isinstance(e, Var):
        return e.index + 1 if e.name == name else 0
    if isinstance(e, Neg):
        return max_index(e.operand, name)
    if isinstance(e, BinOp):
        return max(max_index(e.left, name), max_index(e.right, name))
    if isinstance(e, Call):
        return max(max_index(a, name) for a in e.args)
    return 0


# ---------------------------------------------------------------- duals


class Dual:
    """``val + sum_k der[k] eps_k``; components may themselves be Duals."""

    __slots__ = ("val", "der")

    def __init__(self, val, der):
        self.val = val
        self.der = tuple(der)

    def __repr__(self):
        return f"Dual({self.val!r}, {self.der!r})"

    def __neg__(self):
        return Dual(-self.val, [-d for d in self.der])

    def __add__(self, o):
        if isinstance(o, Dual):
            return Dual(self.val + o.val, [a + b for a, b in zip(self.der, o.der)])
        return Dual(self.val + o, self.der)

    __radd__ = __add__

    def __sub__(self, o):
        if isinstance(o, Dual):
            return Dual(self.val - o.val, [a - b for a, b in zip(self.der, o.der)])
        return Dual(self.val - o, self.der)

    def __rsub__(self, o):
        return Dual(o - self.val, [-d for d in self.der])

    def __mul__(self, o):
        if isinstance(o, Dual):
            return Dual(self.val * o.val,
                        [self.val * b + a * o.val for a, b in zip(self.der, o.der)])
        return Dual(self.val * o, [d * o for d in self.der])

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, Dual):
            q = self.val / o.val
            return Dual(q, [(a - q * b) / o.val for a, b in zip(self.der, o.der)])
        return Dual(self.val / o, [d / o for d in self.der])

    def __rtruediv__(self, o):
        q = o / self.val
        return Dual(q, [-q * d / self.val for d in self.der])


def value_of(a):
    """Strip all dual layers."""
    while isinstance(a, Dual):
        a = a.val
    return a


def _chain(a, f, df):
    if isinstance(a, Dual):
        fp = df(a.val)
        return Dual(f(a.val), [fp * d for d in a.der])
    return f(a)


def d_sin(a):
    return _chain(a, d_sin, d_cos) if isinstance(a, Dual) else np.sin(a)


def d_cos(a):
    return _chain(a, d_cos, lambda v: -d_sin(v)) if isinstance(a, Dual) else np.cos(a)


def d_exp(a):
    return _chain(a, d_exp, d_exp) if isinstance(a, Dual) else np.exp(a)


def d_log(a):
    return _chain(a, d_log, lambda v: 1.0 / v) if isinstance(a, Dual) else np.log(a)


def d_sqrt(a):
    return _chain(a, d_sqrt, lambda v: 0.5 / d_sqrt(v)) if isinstance(a, Dual) else np.sqrt(a)


def d_tanh(a):
    if isinstance(a, Dual):
        return _chain(a, d_tanh, lambda v: 1.0 - d_tanh(v) * d_tanh(v))
    return np.tanh(a)


def d_abs(a):
    return _chain(a, d_abs, lambda v: np.sign(value_of(v))) if isinstance(a, Dual) else np.abs(a)


def d_pow(a, b):
    if not isinstance(a, Dual) and not isinstance(b, Dual):
        return np.power(a, b)
    if not isinstance(b, Dual):
        return _chain(a, lambda v: d_pow(v, b), lambda v: b * d_pow(v, b - 1.0))
    # variable exponent: d(a^b) = a^b (db log a + b da / a)
    av = a.val if isinstance(a, Dual) else a
    da = a.der if isinstance(a, Dual) else (0.0,) * len(b.der)
    out = d_pow(av, b.val)
    return Dual(out, [out * (db * d_log(av) + b.val * dA / av) for dA, db in zip(da, b.der)])


_FUNCS = {"sin": d_sin, "cos": d_cos, "exp": d_exp, "log": d_log, "sqrt": d_sqrt,
          "tanh": d_tanh, "abs": d_abs}


def _domain(bad, what, e, source):
    if np.any(bad):
        raise ExprDomainError(what, source, e.pos)


def _evaluate(e: Expr, env: dict, source: str):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        return env[e.name][e.index]
    if isinstance(e, Neg):
        return -_evaluate(e.operand, env, source)
    if isinstance(e, BinOp):
        a = _evaluate(e.left, env, source)
        b = _evaluate(e.right, env, source)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            _domain(np.asarray(value_of(b)) == 0, "division by zero", e, source)
            return a / b
        return _pow_checked(a, b, e, source)
    args = [_evaluate(a, env, source) for a in e.args]
    if e.fn == "pow":
        return _pow_checked(args[0], args[1], e, source)
    v = np.asarray(value_of(args[0]))
    if e.fn == "log":
        _domain(v <= 0, "log of nonpositive value", e, source)
    elif e.fn == "sqrt":
        _domain(v < 0, "sqrt of negative value", e, source)
    return _FUNCS[e.fn](args[0])


def _pow_checked(a, b, e, source):
    av, bv = np.asarray(value_of(a)), np.asarray(value_of(b))
    _domain((av == 0) & (bv < 0), "zero raised to a negative power", e, source)
    _domain((av < 0) & (bv != np.round(bv)), "negative base with non-integer exponent", e, source)
    if isinstance(b, Dual):
        _domain(av <= 0, "variable exponent needs a positive base", e, source)
    return d_pow(a, b)


class Compiled:
    """A parsed expression bound to its source text and dimensions."""

    def __init__(self, source: str, n: int, k: int = 0):
        self.source = source
        self.n, self.k = n, k
        self.expr = parse(source, n, k)

    def __repr__(self):
        return f"Compiled({self.source!r})"

    def _env(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.zeros(0) if u is None else np.asarray(u, dtype=float)
        return {"x": [x[..., i] for i in range(self.n)],
                "u": [u[..., j] for j in range(u.shape[-1])] if u.ndim else []}

    def eval(self, x, u=None):
        x = np.asarray(x, dtype=float)
        out = np.asarray(_evaluate(self.expr, self._env(x, u), self.source), dtype=float)
        lead = _lead(x, u)
        return out if out.shape == lead else np.broadcast_to(out, lead).copy()

    def eval_dual(self, x, u=None, wrt: Sequence[int] | None = None) -> Dual:
        """Value and first partials w.r.t. state coordinates ``wrt``."""
        x = np.asarray(x, dtype=float)
        wrt = list(range(self.n)) if wrt is None else list(wrt)
        env = self._env(x, u)
        m = len(wrt)
        for slot, i in enumerate(wrt):
            env["x"][i] = Dual(env["x"][i], [1.0 if s == slot else 0.0 for s in range(m)])
        out = _evaluate(self.expr, env, self.source)
        if not isinstance(out, Dual):
            out = Dual(out, [0.0] * m)
        return out

    def gradient(self, x, u=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = self.eval_dual(x, u)
        lead = _lead(x, u)
        return np.stack([np.broadcast_to(np.asarray(d, float), lead) for d in out.der], axis=-1)

    def hessian(self, x, u=None) -> np.ndarray:
        """Hessian by a nested dual pass (outer and inner seeds on x)."""
        x = np.asarray(x, dtype=float)
        env = self._env(x, u)
        n = self.n
        for i in range(n):
            e = [1.0 if s == i else 0.0 for s in range(n)]
            inner = Dual(env["x"][i], e)
            env["x"][i] = Dual(inner, [Dual(ei, [0.0] * n) for ei in e])
        out = _evaluate(self.expr, env, self.source)
        lead = _lead(x, u)
        H = np.zeros(lead + (n, n))
        if not isinstance(out, Dual):
            return H
        for a, da in enumerate(out.der):
            if isinstance(da, Dual):
                for b, dab in enumerate(da.der):
                    H[..., a, b] = np.broadcast_to(np.asarray(value_of(dab), float), lead)
        return H


def _lead(x, u):
    xs = np.shape(x)[:-1]
    us = np.shape(u)[:-1] if u is not None and np.ndim(u) else ()
    return np.broadcast_shapes(xs, us)
