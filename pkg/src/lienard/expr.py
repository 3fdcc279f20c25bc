"""Small arithmetic expression language for the scalar terms of a model.

Grammar (lowest to highest precedence)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := atom ('^' integer)?
    atom    := number | name | func '(' expr ')' | '(' expr ')'

Variables are restricted to ``x1..xn``, ``y1..yn``, ``t`` and ``eps``; ``pi`` is a
named constant. Expressions are immutable trees and evaluate on floats or numpy
arrays alike.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Union

import numpy as np

Number = Union[float, np.ndarray]

FUNCTIONS = ("sin", "cos", "exp", "sqrt", "abs")
_VAR_RE = re.compile(r"^(?:[xy][1-9][0-9]*|t|eps)$")


class ExpressionError(ValueError):
    """Base class for parse and evaluation failures."""


class ExprSyntaxError(ExpressionError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnknownIdentifierError(ExprSyntaxError):
    pass


class EvaluationError(ExpressionError):
    pass


class NonPolynomialError(ExpressionError):
    pass


# --------------------------------------------------------------------- nodes


class Expression:
    """Base node. Subclasses are frozen dataclasses."""

    __slots__ = ()

    def evaluate(self, binding: Mapping[str, Number]) -> Number:
        return evaluate(self, binding)

    def __str__(self) -> str:
        return to_string(self)

    @cached_property
    def variables(self) -> frozenset[str]:
        return frozenset(_collect_vars(self))


@dataclass(frozen=True, eq=True)
class Const(Expression):
    value: float
    label: str | None = None  # "pi" keeps its name when printed


@dataclass(frozen=True, eq=True)
class Var(Expression):
    name: str


@dataclass(frozen=True, eq=True)
class Neg(Expression):
    arg: Expression


@dataclass(frozen=True, eq=True)
class BinOp(Expression):
    op: str  # one of + - * /
    left: Expression
    right: Expression


@dataclass(frozen=True, eq=True)
class Pow(Expression):
    base: Expression
    exponent: int


@dataclass(frozen=True, eq=True)
class Func(Expression):
    name: str
    arg: Expression


ZERO = Const(0.0)
ONE = Const(1.0)


def _collect_vars(e: Expression):
    if isinstance(e, Var):
        yield e.name
    elif isinstance(e, (Neg, Func)):
        yield from _collect_vars(e.arg)
    elif isinstance(e, Pow):
        yield from _collect_vars(e.base)
    elif isinstance(e, BinOp):
        yield from _collect_vars(e.left)
        yield from _collect_vars(e.right)


# ------------------------------------------------------------- constructors
# Light constant folding keeps derivative output readable ("2*x1", not "2*x1^1*1").


def const(v: float) -> Const:
    return Const(float(v))


def _is_const(e: Expression, v: float | None = None) -> bool:
    return isinstance(e, Const) and (v is None or e.value == v)


def add(a: Expression, b: Expression) -> Expression:
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    if _is_const(a) and _is_const(b):
        return const(a.value + b.value)
    return BinOp("+", a, b)


def sub(a: Expression, b: Expression) -> Expression:
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    if _is_const(a) and _is_const(b):
        return const(a.value - b.value)
    return BinOp("-", a, b)


def mul(a: Expression, b: Expression) -> Expression:
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if _is_const(a) and _is_const(b):
        return const(a.value * b.value)
    if _is_const(b) and not _is_const(a):
        a, b = b, a
    return BinOp("*", a, b)


def div(a: Expression, b: Expression) -> Expression:
    if _is_const(b, 1.0):
        return a
    if _is_const(a, 0.0) and not _is_const(b, 0.0):
        return ZERO
    return BinOp("/", a, b)


def neg(a: Expression) -> Expression:
    if _is_const(a):
        return const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def power(a: Expression, k: int) -> Expression:
    if k == 0:
        return ONE
    if k == 1:
        return a
    if _is_const(a) and k > 0:
        return const(a.value**k)
    return Pow(a, k)


# ------------------------------------------------------------------- parser

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str):
    pos = 0
    tokens = []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            stripped = len(text[pos:]) - len(text[pos:].lstrip())
            raise ExprSyntaxError(f"unexpected character {text[pos + stripped]!r}", pos + stripped + 1)
        kind = m.lastgroup
        start = m.start(kind) + 1  # 1-based column
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text) + 1))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def tok(self):
        return self.tokens[self.i]

    def _accept(self, op: str) -> bool:
        kind, val, _ = self.tok
        if kind == "op" and val == op:
            self.i += 1
            return True
        return False

    def _expect(self, op: str):
        if not self._accept(op):
            kind, val, pos = self.tok
            found = "end of input" if kind == "end" else repr(val)
            raise ExprSyntaxError(f"expected {op!r}, found {found}", pos)

    def parse(self) -> Expression:
        e = self.expr()
        kind, val, pos = self.tok
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {val!r}", pos)
        return e

    def expr(self) -> Expression:
        left = self.term()
        while True:
            if self._accept("+"):
                left = BinOp("+", left, self.term())
            elif self._accept("-"):
                left = BinOp("-", left, self.term())
            else:
                return left

    def term(self) -> Expression:
        left = self.unary()
        while True:
            if self._accept("*"):
                left = BinOp("*", left, self.unary())
            elif self._accept("/"):
                left = BinOp("/", left, self.unary())
            else:
                return left

    def unary(self) -> Expression:
        if self._accept("-"):
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expression:
        base = self.atom()
        if self._accept("^"):
            return Pow(base, self._integer_exponent())
        return base

    def _integer_exponent(self) -> int:
        # accepts  2,  -2,  (2),  (-2)
        kind, val, pos = self.tok
        paren = self._accept("(")
        sign = -1 if self._accept("-") else 1
        kind, val, pos2 = self.tok
        if kind != "num":
            raise ExprSyntaxError("non-integer exponent", pos2 if kind != "end" else pos2)
        if not re.fullmatch(r"\d+", val):
            raise ExprSyntaxError(f"non-integer exponent {val!r}", pos2)
        self.i += 1
        if paren:
            self._expect(")")
        return sign * int(val)

    def atom(self) -> Expression:
        kind, val, pos = self.tok
        if kind == "num":
            self.i += 1
            return Const(float(val))
        if kind == "name":
            self.i += 1
            if val in FUNCTIONS:
                self._expect("(")
                arg = self.expr()
                self._expect(")")
                return Func(val, arg)
            if val == "pi":
                return Const(math.pi, "pi")
            if _VAR_RE.match(val):
                return Var(val)
            raise UnknownIdentifierError(f"unknown identifier {val!r}", pos)
        if kind == "op" and val == "(":
            self.i += 1
            e = self.expr()
            self._expect(")")
            return e
        found = "end of input" if kind == "end" else repr(val)
        raise ExprSyntaxError(f"unexpected {found}", pos)


def parse(text: str) -> Expression:
    """Parse ``text`` into an expression tree.

    Raises
    ------
    ExprSyntaxError
        Malformed input; ``position`` is the 1-based column (end of input is
        ``len(text) + 1``).
    UnknownIdentifierError
        A name that is neither a supported variable nor a function.
    """
    if not text or not text.strip():
        raise ExprSyntaxError("empty expression", 1)
    return _Parser(text).parse()


# ---------------------------------------------------------------- printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _fmt_number(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def _prec(e: Expression) -> int:
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, Neg):
        return 3
    if isinstance(e, Const) and e.label is None and (e.value < 0 or math.copysign(1, e.value) < 0):
        return 3  # prints with a leading minus
    if isinstance(e, Pow):
        return 4
    return 5


def to_string(e: Expression) -> str:
    """Render with minimal parentheses; the output parses back to the same tree
    up to negative-constant normalisation, which evaluates bit-identically."""
    if isinstance(e, Const):
        if e.label:
            return e.label
        return _fmt_number(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Func):
        return f"{e.name}({to_string(e.arg)})"
    if isinstance(e, Neg):
        inner = to_string(e.arg)
        if _prec(e.arg) < 4:
            inner = f"({inner})"
        return "-" + inner
    if isinstance(e, Pow):
        base = to_string(e.base)
        if _prec(e.base) < 5:
            base = f"({base})"
        exp = str(e.exponent) if e.exponent >= 0 else f"({e.exponent})"
        return f"{base}^{exp}"
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        left = to_string(e.left)
        if _prec(e.left) < p:
            left = f"({left})"
        right = to_string(e.right)
        # right operand of equal precedence needs parens to keep left-assoc
        if _prec(e.right) <= p:
            right = f"({right})"
        return f"{left}{e.op}{right}" if e.op in "*/^" else f"{left} {e.op} {right}"
    raise TypeError(f"not an expression: {e!r}")


# -------------------------------------------------------------- evaluation


def _is_array(v) -> bool:
    return isinstance(v, np.ndarray)


def evaluate(e: Expression, binding: Mapping[str, Number]) -> Number:
    """Evaluate ``e`` under ``binding`` (floats or broadcastable numpy arrays).

    Division by zero and ``sqrt`` of a negative number raise
    :class:`EvaluationError` instead of producing inf/nan.
    """
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return binding[e.name]
        except KeyError:
            raise EvaluationError(f"unbound variable {e.name!r}") from None
    if isinstance(e, Neg):
        return -evaluate(e.arg, binding)
    if isinstance(e, Pow):
        b = evaluate(e.base, binding)
        if e.exponent < 0:
            if np.any(np.asarray(b) == 0):
                raise EvaluationError("division by zero (negative power of zero)")
            return 1.0 / b ** (-e.exponent)
        return b**e.exponent
    if isinstance(e, BinOp):
        a = evaluate(e.left, binding)
        b = evaluate(e.right, binding)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if np.any(np.asarray(b) == 0):
            raise EvaluationError(f"division by zero in {to_string(e)}")
        return a / b
    if isinstance(e, Func):
        a = evaluate(e.arg, binding)
        if e.name == "sqrt":
            if np.any(np.asarray(a) < 0):
                raise EvaluationError(f"sqrt of negative value in {to_string(e)}")
            return np.sqrt(a) if _is_array(a) else math.sqrt(a)
        if e.name == "abs":
            return abs(a)
        fn = getattr(np, e.name) if _is_array(a) else getattr(math, e.name)
        return fn(a)
    raise TypeError(f"not an expression: {e!r}")


def _source(e: Expression, varmap: Mapping[str, str]) -> str:
    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, Var):
        return varmap[e.name]
    if isinstance(e, Neg):
        return f"(-{_source(e.arg, varmap)})"
    if isinstance(e, Pow):
        return f"({_source(e.base, varmap)}**{e.exponent})"
    if isinstance(e, BinOp):
        return f"({_source(e.left, varmap)}{e.op}{_source(e.right, varmap)})"
    if isinstance(e, Func):
        name = "absolute" if e.name == "abs" else e.name
        return f"_np.{name}({_source(e.arg, varmap)})"
    raise TypeError(f"not an expression: {e!r}")


def compile_vectorized(e: Expression, n: int):
    """Return ``fn(X, Y, t, eps)`` evaluating ``e`` on stacked states.

    ``X`` and ``Y`` have shape ``(..., n)``; the result broadcasts to ``X.shape[:-1]``.
    This is the hot path used by the integrators and grid sweeps; no domain
    checks are made (callers check finiteness of results).
    """
    varmap = {"t": "t", "eps": "eps"}
    for i in range(1, n + 1):
        varmap[f"x{i}"] = f"X[..., {i - 1}]"
        varmap[f"y{i}"] = f"Y[..., {i - 1}]"
    unknown = e.variables - set(varmap)
    if unknown:
        raise EvaluationError(f"variables {sorted(unknown)} out of range for n={n}")
    src = f"lambda X, Y, t, eps: {_source(e, varmap)}"
    # the source is generated from a validated tree; no user text reaches eval
    fn = eval(src, {"_np": np, "__builtins__": {}})
    if not e.variables - {"t", "eps"}:
        # constant in the state: broadcast explicitly
        def const_fn(X, Y, t, eps, _f=fn):
            return np.broadcast_to(np.asarray(_f(X, Y, t, eps), dtype=float), X.shape[:-1])

        return const_fn
    return fn


def compile_univariate(e: Expression, var: str):
    """Return ``fn(x)`` for an expression in the single variable ``var``."""
    extra = e.variables - {var}
    if extra:
        raise EvaluationError(f"expression depends on {sorted(extra)} besides {var!r}")
    fn = eval(f"lambda x: {_source(e, {var: 'x'})}", {"_np": np, "__builtins__": {}})

    def wrapped(x, _f=fn):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(_f(x), dtype=float), x.shape)

    return wrapped


# ---------------------------------------------------------- polynomial tools


def is_polynomial(e: Expression) -> bool:
    """True for trees built from +, -, *, non-negative integer powers and
    division by nonzero constants."""
    try:
        _check_polynomial(e)
    except NonPolynomialError:
        return False
    return True


def _check_polynomial(e: Expression) -> None:
    if isinstance(e, (Const, Var)):
        return
    if isinstance(e, Neg):
        return _check_polynomial(e.arg)
    if isinstance(e, Pow):
        if e.exponent < 0:
            raise NonPolynomialError(f"negative power in {to_string(e)}")
        return _check_polynomial(e.base)
    if isinstance(e, BinOp):
        if e.op == "/" and not (_is_const(e.right) and e.right.value != 0):
            raise NonPolynomialError(f"division node {to_string(e)}")
        _check_polynomial(e.left)
        _check_polynomial(e.right)
        return
    if isinstance(e, Func):
        raise NonPolynomialError(f"function node {to_string(e)}")
    raise TypeError(f"not an expression: {e!r}")


def differentiate(e: Expression, var: str) -> Expression:
    """Exact partial derivative of a polynomial expression.

    Raises :class:`NonPolynomialError` naming the offending node otherwise.
    """
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == var else ZERO
    if var not in e.variables:
        _check_polynomial(e)
        return ZERO
    if isinstance(e, Neg):
        return neg(differentiate(e.arg, var))
    if isinstance(e, Pow):
        if e.exponent < 0:
            raise NonPolynomialError(f"negative power in {to_string(e)}")
        k = e.exponent
        return mul(mul(const(k), power(e.base, k - 1)), differentiate(e.base, var))
    if isinstance(e, BinOp):
        if e.op in "+-":
            da, db = differentiate(e.left, var), differentiate(e.right, var)
            return add(da, db) if e.op == "+" else sub(da, db)
        if e.op == "*":
            return add(
                mul(differentiate(e.left, var), e.right),
                mul(e.left, differentiate(e.right, var)),
            )
        if not (_is_const(e.right) and e.right.value != 0):
            raise NonPolynomialError(f"division node {to_string(e)}")
        return div(differentiate(e.left, var), e.right)
    if isinstance(e, Func):
        raise NonPolynomialError(f"function node {to_string(e)}")
    raise TypeError(f"not an expression: {e!r}")


def _univariate_coeffs(e: Expression, var: str) -> dict[int, float]:
    """Expand a univariate polynomial into ``{degree: coefficient}``."""

    def mul_poly(p, q):
        out: dict[int, float] = {}
        for i, a in p.items():
            for j, b in q.items():
                out[i + j] = out.get(i + j, 0.0) + a * b
        return out

    def go(node) -> dict[int, float]:
        if isinstance(node, Const):
            return {0: node.value}
        if isinstance(node, Var):
            if node.name != var:
                raise NonPolynomialError(f"variable {node.name!r} is not {var!r}")
            return {1: 1.0}
        if isinstance(node, Neg):
            return {k: -v for k, v in go(node.arg).items()}
        if isinstance(node, Pow):
            if node.exponent < 0:
                raise NonPolynomialError(f"negative power in {to_string(node)}")
            out, base = {0: 1.0}, go(node.base)
            for _ in range(node.exponent):
                out = mul_poly(out, base)
            return out
        if isinstance(node, BinOp):
            p = go(node.left)
            if node.op == "/":
                if not (_is_const(node.right) and node.right.value != 0):
                    raise NonPolynomialError(f"division node {to_string(node)}")
                return {k: v / node.right.value for k, v in p.items()}
            q = go(node.right)
            if node.op == "*":
                return mul_poly(p, q)
            sign = 1.0 if node.op == "+" else -1.0
            out = dict(p)
            for k, v in q.items():
                out[k] = out.get(k, 0.0) + sign * v
            return out
        raise NonPolynomialError(f"function node {to_string(node)}")

    return {k: v for k, v in go(e).items() if v != 0.0}


def antiderivative(e: Expression, var: str) -> Expression:
    """Antiderivative in ``var`` with zero constant term.

    ``e`` must be a univariate polynomial in ``var``; the result is a sum of
    terms ``c*var^(k+1)/(k+1)``.
    """
    coeffs = _univariate_coeffs(e, var)
    x = Var(var)
    result: Expression = ZERO
    for k in sorted(coeffs):
        c = coeffs[k]
        term = div(power(x, k + 1), const(k + 1))
        if c == -1.0:
            term = neg(term)
        elif c != 1.0:
            term = mul(const(c), term)
        result = term if result is ZERO else add(result, term)
    return result
