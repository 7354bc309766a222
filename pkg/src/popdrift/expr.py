"""Arithmetic expression language used for population model rates.

Expressions are built from numeric literals, parameter names, the
population size ``N``, occupancy terms ``m[state]``, the binary
operators ``+ - * /`` with unary minus, and the functions ``pow``,
``exp``, ``ln``, ``min`` and ``max``.  Parsing is recursive descent
over the grammar

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := '-' factor | atom
    atom   := number | ident | ident '(' expr (',' expr)* ')'
            | 'm' '[' ident ']' | '(' expr ')'

``N`` is reserved for the population size.  ``pow(0, 0)`` evaluates
to 1.  Syntax errors carry a 1-based column number.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence, Union

__all__ = [
    "Num",
    "Name",
    "Occ",
    "Neg",
    "BinOp",
    "Call",
    "Expr",
    "ExprError",
    "ExprSyntaxError",
    "ExprEvalError",
    "parse",
    "evaluate",
    "free_vars",
    "pretty",
    "compile_fn",
    "FUNCTIONS",
]


class ExprError(ValueError):
    """Base class for expression language errors."""


class ExprSyntaxError(ExprError):
    """Malformed expression text.  ``column`` is 1-based."""

    def __init__(self, message: str, column: int):
        super().__init__(f"{message} (column {column})")
        self.column = column


class ExprEvalError(ExprError):
    """Unbound name or numeric domain violation during evaluation."""


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Name:
    ident: str


@dataclass(frozen=True)
class Occ:
    """Occupancy term ``m[state]``."""

    state: str


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
    args: tuple["Expr", ...]


Expr = Union[Num, Name, Occ, Neg, BinOp, Call]

# function name -> arity
FUNCTIONS = {"pow": 2, "exp": 1, "ln": 1, "min": 2, "max": 2}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[+\-*/()\[\],])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # 'number' | 'ident' | one of '+-*/()[],' | 'end'
    text: str
    column: int  # 1-based


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", pos + 1)
        if match.lastgroup == "number":
            tokens.append(_Token("number", match.group(), pos + 1))
        elif match.lastgroup == "ident":
            tokens.append(_Token("ident", match.group(), pos + 1))
        elif match.lastgroup == "punct":
            tokens.append(_Token(match.group(), match.group(), pos + 1))
        pos = match.end()
    tokens.append(_Token("end", "", len(text) + 1))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.index = 0

    def peek(self) -> _Token:
        return self.tokens[self.index]

    def advance(self) -> _Token:
        tok = self.tokens[self.index]
        self.index += 1
        return tok

    def expect(self, kind: str) -> _Token:
        tok = self.peek()
        if tok.kind != kind:
            raise ExprSyntaxError(
                f"expected {kind!r}, found {tok.text or 'end of input'!r}", tok.column
            )
        return self.advance()

    def parse_expr(self) -> Expr:
        node = self.parse_term()
        while self.peek().kind in ("+", "-"):
            op = self.advance().kind
            node = BinOp(op, node, self.parse_term())
        return node

    def parse_term(self) -> Expr:
        node = self.parse_factor()
        while self.peek().kind in ("*", "/"):
            op = self.advance().kind
            node = BinOp(op, node, self.parse_factor())
        return node

    def parse_factor(self) -> Expr:
        if self.peek().kind == "-":
            self.advance()
            return Neg(self.parse_factor())
        return self.parse_atom()

    def parse_atom(self) -> Expr:
        tok = self.peek()
        if tok.kind == "number":
            self.advance()
            return Num(float(tok.text))
        if tok.kind == "(":
            self.advance()
            node = self.parse_expr()
            self.expect(")")
            return node
        if tok.kind == "ident":
            self.advance()
            if tok.text == "m" and self.peek().kind == "[":
                self.advance()
                state = self.expect("ident")
                self.expect("]")
                return Occ(state.text)
            if self.peek().kind == "(":
                if tok.text not in FUNCTIONS:
                    raise ExprSyntaxError(f"unknown function {tok.text!r}", tok.column)
                self.advance()
                args = [self.parse_expr()]
                while self.peek().kind == ",":
                    self.advance()
                    args.append(self.parse_expr())
                self.expect(")")
                if len(args) != FUNCTIONS[tok.text]:
                    raise ExprSyntaxError(
                        f"{tok.text} takes {FUNCTIONS[tok.text]} arguments, "
                        f"got {len(args)}",
                        tok.column,
                    )
                return Call(tok.text, tuple(args))
            return Name(tok.text)
        raise ExprSyntaxError(
            f"unexpected {tok.text or 'end of input'!r}", tok.column
        )


def parse(text: str) -> Expr:
    """Parse expression text into an AST.

    Raises ExprSyntaxError with a 1-based column on malformed input.
    """
    parser = _Parser(text)
    node = parser.parse_expr()
    tok = parser.peek()
    if tok.kind != "end":
        raise ExprSyntaxError(f"unexpected {tok.text!r}", tok.column)
    return node


def _checked_pow(base: float, exponent: float, origin: Expr) -> float:
    if base == 0.0 and exponent == 0.0:
        return 1.0
    if base == 0.0 and exponent < 0.0:
        raise ExprEvalError(f"zero raised to negative power in {pretty(origin)}")
    if base < 0.0 and exponent != int(exponent):
        raise ExprEvalError(
            f"negative base with non-integer exponent in {pretty(origin)}"
        )
    try:
        return math.pow(base, exponent)
    except OverflowError:
        raise ExprEvalError(f"overflow in {pretty(origin)}") from None


def evaluate(e: Expr, bindings: Mapping[str, float]) -> float:
    """Evaluate an expression against bindings.

    Bindings map identifiers (including ``N``) and occupancy keys of the
    form ``m[state]`` to reals.  Unbound names and numeric domain
    violations raise ExprEvalError naming the offending sub-expression.
    """
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Name):
        try:
            return float(bindings[e.ident])
        except KeyError:
            raise ExprEvalError(f"unbound identifier {e.ident!r}") from None
    if isinstance(e, Occ):
        key = f"m[{e.state}]"
        try:
            return float(bindings[key])
        except KeyError:
            raise ExprEvalError(f"unbound occupancy term {key!r}") from None
    if isinstance(e, Neg):
        return -evaluate(e.operand, bindings)
    if isinstance(e, BinOp):
        left = evaluate(e.left, bindings)
        right = evaluate(e.right, bindings)
        if e.op == "+":
            return left + right
        if e.op == "-":
            return left - right
        if e.op == "*":
            return left * right
        if right == 0.0:
            raise ExprEvalError(f"division by zero in {pretty(e)}")
        return left / right
    if isinstance(e, Call):
        args = [evaluate(a, bindings) for a in e.args]
        if e.func == "pow":
            return _checked_pow(args[0], args[1], e)
        if e.func == "exp":
            try:
                return math.exp(args[0])
            except OverflowError:
                raise ExprEvalError(f"overflow in {pretty(e)}") from None
        if e.func == "ln":
            if args[0] <= 0.0:
                raise ExprEvalError(f"ln of non-positive value in {pretty(e)}")
            return math.log(args[0])
        if e.func == "min":
            return min(args)
        return max(args)
    raise TypeError(f"not an expression node: {e!r}")


def free_vars(e: Expr) -> tuple[str, ...]:
    """Names the expression reads, sorted: identifiers and ``m[state]`` keys."""
    found: set[str] = set()

    def walk(node: Expr) -> None:
        if isinstance(node, Name):
            found.add(node.ident)
        elif isinstance(node, Occ):
            found.add(f"m[{node.state}]")
        elif isinstance(node, Neg):
            walk(node.operand)
        elif isinstance(node, BinOp):
            walk(node.left)
            walk(node.right)
        elif isinstance(node, Call):
            for a in node.args:
                walk(a)

    walk(e)
    return tuple(sorted(found))


_PREC_ADD = 1
_PREC_MUL = 2
_PREC_NEG = 3
_PREC_ATOM = 4


def _prec(e: Expr) -> int:
    if isinstance(e, BinOp):
        return _PREC_ADD if e.op in ("+", "-") else _PREC_MUL
    if isinstance(e, Neg):
        return _PREC_NEG
    return _PREC_ATOM


def pretty(e: Expr) -> str:
    """Render an AST back to expression text.

    The output reparses to a structurally identical AST.
    """
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Name):
        return e.ident
    if isinstance(e, Occ):
        return f"m[{e.state}]"
    if isinstance(e, Neg):
        inner = pretty(e.operand)
        if _prec(e.operand) < _PREC_NEG:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(e, BinOp):
        p = _PREC_ADD if e.op in ("+", "-") else _PREC_MUL
        left = pretty(e.left)
        if _prec(e.left) < p:
            left = f"({left})"
        right = pretty(e.right)
        if _prec(e.right) <= p:
            right = f"({right})"
        return f"{left}{e.op}{right}"
    if isinstance(e, Call):
        return f"{e.func}({', '.join(pretty(a) for a in e.args)})"
    raise TypeError(f"not an expression node: {e!r}")


# Value type for the compiled fast path: scalars or numpy arrays, as
# long as they broadcast together.
Value = Union[float, "object"]


def compile_fn(
    e: Expr,
    params: Mapping[str, float],
    state_index: Mapping[str, int],
) -> Callable[[float, Sequence[Value]], Value]:
    """Compile an expression to ``f(N, m)`` with parameters baked in.

    ``m`` is indexed by state position and may hold floats or numpy
    arrays; operations broadcast elementwise.  The compiled function is
    unchecked: domain violations produce inf/nan under numpy semantics
    rather than raising, so callers validate results.  Unbound names
    raise ExprEvalError here, at compile time.
    """
    import numpy as np

    if isinstance(e, Num):
        value = e.value
        return lambda N, m: value
    if isinstance(e, Name):
        if e.ident == "N":
            return lambda N, m: N
        try:
            value = float(params[e.ident])
        except KeyError:
            raise ExprEvalError(f"unbound identifier {e.ident!r}") from None
        return lambda N, m: value
    if isinstance(e, Occ):
        try:
            i = state_index[e.state]
        except KeyError:
            raise ExprEvalError(f"unknown state in occupancy term m[{e.state}]") from None
        return lambda N, m: m[i]
    if isinstance(e, Neg):
        f = compile_fn(e.operand, params, state_index)
        return lambda N, m: -f(N, m)
    if isinstance(e, BinOp):
        lf = compile_fn(e.left, params, state_index)
        rf = compile_fn(e.right, params, state_index)
        if e.op == "+":
            return lambda N, m: lf(N, m) + rf(N, m)
        if e.op == "-":
            return lambda N, m: lf(N, m) - rf(N, m)
        if e.op == "*":
            return lambda N, m: lf(N, m) * rf(N, m)
        return lambda N, m: lf(N, m) / rf(N, m)
    if isinstance(e, Call):
        fns = [compile_fn(a, params, state_index) for a in e.args]
        if e.func == "pow":
            bf, ef = fns
            return lambda N, m: np.power(bf(N, m), ef(N, m))
        if e.func == "exp":
            (af,) = fns
            return lambda N, m: np.exp(af(N, m))
        if e.func == "ln":
            (af,) = fns
            return lambda N, m: np.log(af(N, m))
        if e.func == "min":
            af, bf = fns
            return lambda N, m: np.minimum(af(N, m), bf(N, m))
        af, bf = fns
        return lambda N, m: np.maximum(af(N, m), bf(N, m))
    raise TypeError(f"not an expression node: {e!r}")
