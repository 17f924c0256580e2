"""Small arithmetic expression language used for user-supplied right-hand sides.

Grammar (Pratt / precedence climbing, loosest first)::

    expr   := expr ('+' | '-') expr          left associative
            | expr ('*' | '/') expr          left associative
            | '-' expr                       looser than '^': -a^2 == -(a^2)
            | expr '^' expr                  right associative
            | NUMBER | NAME | NAME '(' args ')' | '(' expr ')'

Numbers are decimal literals with an optional exponent (``1``, ``2.5``,
``.5``, ``3e-4``).  ``pi`` is a named constant.  The allowed functions are
``sin cos exp sqrt abs`` (one argument) and ``pow`` (two arguments).  ``**``
is accepted as a synonym for ``^``.

Evaluation works on floats or on numpy arrays of matching shape; domain
errors (square root of a negative number, zero to a negative power, division
by zero, non-integer powers of negative numbers) are raised instead of
producing NaN.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np

DEFAULT_VARIABLES = frozenset({"t", "x1", "x2"})
JERK_VARIABLES = frozenset({"x", "xd", "xdd"})

FUNCTIONS = {"sin": 1, "cos": 1, "exp": 1, "sqrt": 1, "abs": 1, "pow": 2}
CONSTANTS = {"pi": math.pi}


class ExprError(ValueError):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownIdentifierError(ExprError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown identifier {name!r} at offset {offset}")
        self.name = name
        self.offset = offset


class ArityError(ExprError):
    pass


class ExprDomainError(ExprError, ArithmeticError):
    pass


# --------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Const:
    value: float
    name: str | None = None

    kind = "constant"

    @property
    def children(self):
        return ()


@dataclass(frozen=True)
class Var:
    name: str

    kind = "variable"

    @property
    def children(self):
        return ()


@dataclass(frozen=True)
class Neg:
    operand: "Node"

    kind = "unary"

    @property
    def children(self):
        return (self.operand,)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"

    kind = "binary"

    @property
    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple

    kind = "call"

    @property
    def children(self):
        return self.args


Node = Const | Var | Neg | BinOp | Call

# --------------------------------------------------------------------------
# tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>\*\*|[-+*/^(),])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # 'num' | 'name' | 'op' | 'end'
    text: str
    offset: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", _byte_offset(text, pos))
        kind = m.lastgroup
        if kind != "ws":
            tok = m.group(kind)
            if tok == "**":
                tok = "^"
            tokens.append(_Token(kind, tok, _byte_offset(text, pos)))
        pos = m.end()
    tokens.append(_Token("end", "", _byte_offset(text, len(text))))
    return tokens


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8"))


# --------------------------------------------------------------------------
# parser

_BINARY_LBP = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 30}
_UNARY_RBP = 25  # between '*' and '^'


class _Parser:
    def __init__(self, text: str, variables: frozenset):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.variables = variables

    @property
    def token(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, text: str) -> _Token:
        tok = self.token
        if tok.text != text or tok.kind == "end":
            found = "end of input" if tok.kind == "end" else repr(tok.text)
            raise ExprSyntaxError(f"expected {text!r}, found {found}", tok.offset)
        return self.advance()

    def lbp(self, tok: _Token) -> int:
        if tok.kind == "op":
            return _BINARY_LBP.get(tok.text, 0)
        return 0

    def expression(self, rbp: int = 0) -> Node:
        left = self.nud(self.advance())
        while rbp < self.lbp(self.token):
            tok = self.advance()
            left = self.led(tok, left)
        return left

    def nud(self, tok: _Token) -> Node:
        if tok.kind == "num":
            return Const(float(tok.text))
        if tok.kind == "name":
            return self.name(tok)
        if tok.text == "-":
            return Neg(self.expression(_UNARY_RBP))
        if tok.text == "+":
            return self.expression(_UNARY_RBP)
        if tok.text == "(":
            inner = self.expression(0)
            self.expect(")")
            return inner
        found = "end of input" if tok.kind == "end" else repr(tok.text)
        raise ExprSyntaxError(f"unexpected {found}", tok.offset)

    def led(self, tok: _Token, left: Node) -> Node:
        if tok.text == "^":
            # right associative
            return BinOp("^", left, self.expression(_BINARY_LBP["^"] - 1))
        return BinOp(tok.text, left, self.expression(_BINARY_LBP[tok.text]))

    def name(self, tok: _Token) -> Node:
        name = tok.text
        if self.token.text == "(" and self.token.kind == "op":
            if name not in FUNCTIONS:
                raise UnknownIdentifierError(name, tok.offset)
            self.advance()
            args = []
            if self.token.text != ")":
                args.append(self.expression(0))
                while self.token.text == ",":
                    self.advance()
                    args.append(self.expression(0))
            self.expect(")")
            if len(args) != FUNCTIONS[name]:
                raise ArityError(
                    f"{name} expects {FUNCTIONS[name]} argument(s), got {len(args)} "
                    f"at offset {tok.offset}"
                )
            return Call(name, tuple(args))
        if name in self.variables:
            return Var(name)
        if name in CONSTANTS:
            return Const(CONSTANTS[name], name)
        raise UnknownIdentifierError(name, tok.offset)


def parse_expr(text: str, variables: Iterable[str] = DEFAULT_VARIABLES) -> Node:
    """Parse ``text`` into an AST over the declared ``variables``."""
    if not text or not text.strip():
        raise ExprSyntaxError("empty expression", 0)
    parser = _Parser(text, frozenset(variables))
    node = parser.expression(0)
    if parser.token.kind != "end":
        raise ExprSyntaxError(f"unexpected {parser.token.text!r}", parser.token.offset)
    return node


# --------------------------------------------------------------------------
# printing


def _prec(node: Node) -> int:
    if isinstance(node, BinOp):
        return _BINARY_LBP[node.op]
    if isinstance(node, Neg):
        return _UNARY_RBP
    return 100


def to_string(node: Node) -> str:
    """Print ``node`` with the minimal parentheses that reparse to the same tree."""
    if isinstance(node, Const):
        if node.name:
            return node.name
        v = float(node.value)
        return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Call):
        return f"{node.name}({', '.join(to_string(a) for a in node.args)})"
    if isinstance(node, Neg):
        inner = to_string(node.operand)
        if isinstance(node.operand, BinOp) and node.operand.op != "^":
            inner = f"({inner})"
        return f"-{inner}"
    left, right = to_string(node.left), to_string(node.right)
    p = _BINARY_LBP[node.op]
    if node.op == "^":
        if _prec(node.left) <= p:
            left = f"({left})"
        if isinstance(node.right, BinOp) and _prec(node.right) < p:
            right = f"({right})"
    else:
        if _prec(node.left) < p:
            left = f"({left})"
        if isinstance(node.right, BinOp) and _prec(node.right) <= p:
            right = f"({right})"
    return f"{left} {node.op} {right}" if p == 10 else f"{left}{node.op}{right}"


# --------------------------------------------------------------------------
# evaluation


def variables_of(node: Node) -> set:
    if isinstance(node, Var):
        return {node.name}
    out = set()
    for child in node.children:
        out |= variables_of(child)
    return out


def substitute(node: Node, mapping: Mapping[str, Node]) -> Node:
    """Replace variables by sub-trees."""
    if isinstance(node, Var):
        return mapping.get(node.name, node)
    if isinstance(node, Const):
        return node
    if isinstance(node, Neg):
        return Neg(substitute(node.operand, mapping))
    if isinstance(node, BinOp):
        return BinOp(node.op, substitute(node.left, mapping), substitute(node.right, mapping))
    return Call(node.name, tuple(substitute(a, mapping) for a in node.args))


def is_zero(node: Node) -> bool:
    return isinstance(node, Const) and node.value == 0.0


def _any(mask) -> bool:
    return bool(np.any(mask))


def _sqrt(a):
    if _any(np.asarray(a) < 0):
        raise ExprDomainError("sqrt of a negative number")
    return np.sqrt(a)


def _div(a, b):
    if _any(np.asarray(b) == 0):
        raise ExprDomainError("division by zero")
    return a / b


def _pow(a, b):
    a_arr, b_arr = np.asarray(a), np.asarray(b)
    if _any((a_arr == 0) & (b_arr < 0)):
        raise ExprDomainError("0 raised to a negative power")
    if _any((a_arr < 0) & (np.floor(b_arr) != b_arr)):
        raise ExprDomainError("negative base with non-integer exponent")
    if np.ndim(b_arr) == 0 and float(b_arr) == 2.0:
        return a * a
    with np.errstate(over="ignore"):
        return np.power(a, b)


_UNARY_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": _sqrt, "abs": np.abs}
_BINARY_FUNCS = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": _div,
    "^": _pow,
}


def compile_expr(node: Node) -> Callable[[Mapping[str, object]], object]:
    """Turn an AST into a closure ``env -> value``; each call is independent."""
    if isinstance(node, Const):
        value = float(node.value)
        return lambda env: value
    if isinstance(node, Var):
        name = node.name

        def var(env):
            try:
                return env[name]
            except KeyError:
                raise ExprError(f"variable {name!r} is not bound") from None

        return var
    if isinstance(node, Neg):
        inner = compile_expr(node.operand)
        return lambda env: -inner(env)
    if isinstance(node, BinOp):
        f, lhs, rhs = _BINARY_FUNCS[node.op], compile_expr(node.left), compile_expr(node.right)
        return lambda env: f(lhs(env), rhs(env))
    if node.name == "pow":
        lhs, rhs = compile_expr(node.args[0]), compile_expr(node.args[1])
        return lambda env: _pow(lhs(env), rhs(env))
    f, arg = _UNARY_FUNCS[node.name], compile_expr(node.args[0])
    return lambda env: f(arg(env))


def eval_expr(node: Node, env: Mapping[str, object]):
    value = compile_expr(node)(env)
    if _any(np.isnan(value)):
        raise ExprDomainError("expression evaluated to NaN")
    return value
