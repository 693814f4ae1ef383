"""Scalar expression DSL: parsing, evaluation, symbolic differentiation.

Expressions over a declared variable table are used to define vector
fields, input matrices, metrics, feedforward inputs and gain entries in
configuration files.  Grammar (precedence high to low): ^ with integer
exponent, unary minus, * /, + -.  Functions: sin, cos, exp, abs, sqrt
(plus sign, which only appears in derivatives of abs but is accepted by
the parser so printed derivatives round-trip).
"""

from __future__ import annotations

import math
from dataclasses import dataclass


class ExprSyntaxError(ValueError):
    """Raised on malformed expression text; carries the byte offset."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class UnknownIdentifierError(ValueError):
    def __init__(self, name, offset):
        super().__init__(f"unknown identifier '{name}' (offset {offset})")
        self.name = name
        self.offset = offset


class EvalDomainError(ArithmeticError):
    """Division by zero, sqrt of a negative, or an unbound variable."""


FUNCTIONS = ("sin", "cos", "exp", "abs", "sqrt", "sign")

_UNARY_EVAL = {
    "neg": lambda v: -v,
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
    "abs": abs,
    "sign": lambda v: 0.0 if v == 0.0 else math.copysign(1.0, v),
}


@dataclass(frozen=True)
class Expr:
    """Immutable expression node.

    kind is one of: "const" (value), "var" (name),
    "neg"/"sin"/"cos"/"exp"/"abs"/"sqrt"/"sign" (a,),
    "add"/"sub"/"mul"/"div" (a, b), "pow" (a, integer exponent).
    """

    kind: str
    value: float = 0.0
    name: str = ""
    args: tuple = ()

    def __call__(self, env):
        return evaluate(self, env)


def const(v):
    return Expr("const", value=float(v))


def var(name):
    return Expr("var", name=name)


ZERO = const(0.0)
ONE = const(1.0)


def _is_const(e, v=None):
    return e.kind == "const" and (v is None or e.value == v)


def add(a, b):
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    if _is_const(a) and _is_const(b):
        return const(a.value + b.value)
    return Expr("add", args=(a, b))


def sub(a, b):
    if _is_const(b, 0.0):
        return a
    if _is_const(a) and _is_const(b):
        return const(a.value - b.value)
    return Expr("sub", args=(a, b))


def mul(a, b):
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if _is_const(a) and _is_const(b):
        return const(a.value * b.value)
    return Expr("mul", args=(a, b))


def div(a, b):
    if _is_const(a, 0.0) and not _is_const(b, 0.0):
        return ZERO
    if _is_const(b, 1.0):
        return a
    return Expr("div", args=(a, b))


def neg(a):
    if _is_const(a):
        return const(-a.value)
    return Expr("neg", args=(a,))


def pow_int(a, n):
    n = int(n)
    if n == 0:
        return ONE
    if n == 1:
        return a
    if _is_const(a):
        return const(a.value**n)
    return Expr("pow", value=float(n), args=(a,))


def func(name, a):
    if name == "neg":
        return neg(a)
    return Expr(name, args=(a,))


class _Tokenizer:
    def __init__(self, text):
        self.text = text
        self.pos = 0
        self.tokens = []
        self._scan()
        self.idx = 0

    def _scan(self):
        text = self.text
        i = 0
        n = len(text)
        while i < n:
            c = text[i]
            if c.isspace():
                i += 1
                continue
            if c in "+-*/^()":
                self.tokens.append((c, c, i))
                i += 1
                continue
            if c.isdigit() or c == ".":
                j = i
                while j < n and (text[j].isdigit() or text[j] == "."):
                    j += 1
                if j < n and text[j] in "eE":
                    k = j + 1
                    if k < n and text[k] in "+-":
                        k += 1
                    if k < n and text[k].isdigit():
                        j = k
                        while j < n and text[j].isdigit():
                            j += 1
                try:
                    value = float(text[i:j])
                except ValueError:
                    raise ExprSyntaxError(f"bad number '{text[i:j]}'", i)
                self.tokens.append(("num", value, i))
                i = j
                continue
            if c.isalpha() or c == "_":
                j = i
                while j < n and (text[j].isalnum() or text[j] == "_"):
                    j += 1
                self.tokens.append(("ident", text[i:j], i))
                i = j
                continue
            raise ExprSyntaxError(f"unexpected character '{c}'", i)
        self.tokens.append(("end", None, n))

    def peek(self):
        return self.tokens[self.idx]

    def next(self):
        tok = self.tokens[self.idx]
        if tok[0] != "end":
            self.idx += 1
        return tok


class _Parser:
    """Recursive descent; ^ binds tighter than unary minus, so -x^2
    means -(x^2)."""

    def __init__(self, text, variables):
        self.tok = _Tokenizer(text)
        self.variables = set(variables)

    def parse(self):
        e = self._expr()
        kind, _, off = self.tok.peek()
        if kind != "end":
            raise ExprSyntaxError("trailing input", off)
        return e

    def _expr(self):
        e = self._term()
        while True:
            kind, _, _ = self.tok.peek()
            if kind == "+":
                self.tok.next()
                e = Expr("add", args=(e, self._term()))
            elif kind == "-":
                self.tok.next()
                e = Expr("sub", args=(e, self._term()))
            else:
                return e

    def _term(self):
        e = self._factor()
        while True:
            kind, _, _ = self.tok.peek()
            if kind == "*":
                self.tok.next()
                e = Expr("mul", args=(e, self._factor()))
            elif kind == "/":
                self.tok.next()
                e = Expr("div", args=(e, self._factor()))
            else:
                return e

    def _factor(self):
        kind, _, _ = self.tok.peek()
        if kind == "-":
            self.tok.next()
            inner = self._factor()
            if inner.kind == "const":
                return const(-inner.value)
            return Expr("neg", args=(inner,))
        return self._power()

    def _power(self):
        base = self._atom()
        kind, _, _ = self.tok.peek()
        if kind != "^":
            return base
        self.tok.next()
        sign = 1
        kind, value, off = self.tok.next()
        if kind == "-":
            sign = -1
            kind, value, off = self.tok.next()
        if kind != "num" or value != int(value):
            raise ExprSyntaxError("exponent must be an integer constant", off)
        return Expr("pow", value=float(sign * int(value)), args=(base,))

    def _atom(self):
        kind, value, off = self.tok.next()
        if kind == "num":
            return const(value)
        if kind == "(":
            e = self._expr()
            k, _, o = self.tok.next()
            if k != ")":
                raise ExprSyntaxError("expected ')'", o)
            return e
        if kind == "ident":
            nxt_kind, _, _ = self.tok.peek()
            if nxt_kind == "(":
                if value not in FUNCTIONS:
                    raise UnknownIdentifierError(value, off)
                self.tok.next()
                arg = self._expr()
                k, _, o = self.tok.next()
                if k != ")":
                    raise ExprSyntaxError("expected ')'", o)
                return Expr(value, args=(arg,))
            if value not in self.variables:
                raise UnknownIdentifierError(value, off)
            return var(value)
        raise ExprSyntaxError("expected expression", off)


def parse(text, variables):
    """Parse expression text over the given iterable of variable names."""
    if not text or not text.strip():
        raise ExprSyntaxError("empty expression", 0)
    return _Parser(text, variables).parse()


def evaluate(expr, env):
    """Evaluate to a float under the variable binding env."""
    kind = expr.kind
    if kind == "const":
        return expr.value
    if kind == "var":
        try:
            return float(env[expr.name])
        except KeyError:
            raise EvalDomainError(f"unbound variable '{expr.name}'")
    if kind in ("add", "sub", "mul", "div"):
        a = evaluate(expr.args[0], env)
        b = evaluate(expr.args[1], env)
        if kind == "add":
            return a + b
        if kind == "sub":
            return a - b
        if kind == "mul":
            return a * b
        if b == 0.0:
            raise EvalDomainError("division by zero")
        return a / b
    if kind == "pow":
        base = evaluate(expr.args[0], env)
        n = int(expr.value)
        if base == 0.0 and n < 0:
            raise EvalDomainError("zero raised to a negative power")
        return base**n
    if kind == "sqrt":
        v = evaluate(expr.args[0], env)
        if v < 0.0:
            raise EvalDomainError(f"sqrt of negative value {v}")
        return math.sqrt(v)
    a = evaluate(expr.args[0], env)
    try:
        return _UNARY_EVAL[kind](a)
    except OverflowError:
        raise EvalDomainError(f"overflow in {kind}({a})")


def free_variables(expr):
    if expr.kind == "var":
        return {expr.name}
    out = set()
    for a in expr.args:
        out |= free_variables(a)
    return out


def differentiate(expr, name):
    """Symbolic partial derivative d expr / d name.

    d|u|/dx is sign(u) * du/dx with sign(0) = 0, so the result is total.
    """
    kind = expr.kind
    if kind == "const":
        return ZERO
    if kind == "var":
        return ONE if expr.name == name else ZERO
    if kind in ("add", "sub"):
        da = differentiate(expr.args[0], name)
        db = differentiate(expr.args[1], name)
        return add(da, db) if kind == "add" else sub(da, db)
    if kind == "mul":
        a, b = expr.args
        return add(mul(differentiate(a, name), b), mul(a, differentiate(b, name)))
    if kind == "div":
        a, b = expr.args
        num = sub(mul(differentiate(a, name), b), mul(a, differentiate(b, name)))
        return div(num, pow_int(b, 2))
    if kind == "pow":
        a = expr.args[0]
        n = int(expr.value)
        return mul(mul(const(n), pow_int(a, n - 1)), differentiate(a, name))
    if kind == "neg":
        return neg(differentiate(expr.args[0], name))
    a = expr.args[0]
    da = differentiate(a, name)
    if kind == "sin":
        return mul(func("cos", a), da)
    if kind == "cos":
        return neg(mul(func("sin", a), da))
    if kind == "exp":
        return mul(func("exp", a), da)
    if kind == "abs":
        return mul(func("sign", a), da)
    if kind == "sqrt":
        return div(da, mul(const(2.0), func("sqrt", a)))
    if kind == "sign":
        return ZERO
    raise ValueError(f"unknown node kind '{kind}'")


def _sign(v):
    return 0.0 if v == 0.0 else math.copysign(1.0, v)


def _sqrt_checked(v):
    if v < 0.0:
        raise EvalDomainError(f"sqrt of negative value {v}")
    return math.sqrt(v)


_COMPILE_GLOBALS = {
    "__builtins__": {},
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
    "sqrt": _sqrt_checked,
    "sign": _sign,
    "abs": abs,
}


def _py_source(expr):
    kind = expr.kind
    if kind == "const":
        return repr(expr.value)
    if kind == "var":
        return expr.name
    if kind in ("add", "sub", "mul", "div"):
        op = {"add": "+", "sub": "-", "mul": "*", "div": "/"}[kind]
        return f"({_py_source(expr.args[0])} {op} {_py_source(expr.args[1])})"
    if kind == "pow":
        return f"({_py_source(expr.args[0])} ** {int(expr.value)})"
    if kind == "neg":
        return f"(-{_py_source(expr.args[0])})"
    return f"{kind}({_py_source(expr.args[0])})"


def compile_fn(expr, variables):
    """Compile an expression to a fast positional-argument callable.

    The result takes one float per name in `variables` (in order) and
    matches `evaluate` bit-for-bit on the same inputs.
    """
    args = ", ".join(variables)
    src = f"lambda {args}: {_py_source(expr)}"
    return eval(src, dict(_COMPILE_GLOBALS))  # noqa: S307 - generated from our own AST


_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}


def to_string(expr, parent_prec=0):
    """Pretty-print; output reparses to a structurally equal tree."""
    kind = expr.kind
    if kind == "const":
        v = expr.value
        s = repr(v) if v >= 0 else f"({v!r})"
        return s
    if kind == "var":
        return expr.name
    if kind in ("add", "sub", "mul", "div"):
        op = {"add": " + ", "sub": " - ", "mul": "*", "div": "/"}[kind]
        prec = _PREC[kind]
        left = to_string(expr.args[0], prec - 1)
        # right operand needs full precedence to keep left associativity
        right = to_string(expr.args[1], prec)
        s = f"{left}{op}{right}"
        return f"({s})" if prec <= parent_prec else s
    if kind == "neg":
        s = "-" + to_string(expr.args[0], _PREC["neg"] - 1)
        return f"({s})" if _PREC["neg"] <= parent_prec else s
    if kind == "pow":
        n = int(expr.value)
        base = to_string(expr.args[0], _PREC["pow"])
        exp = str(n) if n >= 0 else f"-{-n}"
        s = f"{base}^{exp}"
        return f"({s})" if _PREC["pow"] <= parent_prec else s
    return f"{kind}({to_string(expr.args[0])})"
