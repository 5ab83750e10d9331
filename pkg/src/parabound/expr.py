"""A small arithmetic expression language for scenario data.

Grammar (precedence from tightest to loosest)::

    atom    := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'
    power   := atom ['^' power]                 # right associative
    lead    := ['-'] power                      # unary minus
    term    := lead (('*' | '/') power)*
    expr    := term (('+' | '-') term')*        # term' has no leading '-'

Unary minus is only accepted at the start of an expression, i.e. at the very
beginning or right after '(' or ','. ``2*-x`` is rejected; write ``2*(-x)``.

Expressions evaluate elementwise on numpy arrays.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

VARIABLES = ("x", "y", "z", "r", "t")
CONSTANTS = {"pi": np.pi}


def _coth(a):
    return 1.0 / np.tanh(a)


FUNCTIONS = {
    "sin": (np.sin, 1),
    "cos": (np.cos, 1),
    "exp": (np.exp, 1),
    "log": (np.log, 1),
    "sqrt": (np.sqrt, 1),
    "abs": (np.abs, 1),
    "coth": (_coth, 1),
    "min": (np.minimum, 2),
    "max": (np.maximum, 2),
}


class ExpressionError(ValueError):
    """Base class for parse and evaluation failures."""


class ParseError(ExpressionError):
    def __init__(self, message: str, pos: int, src: str = ""):
        self.pos = pos
        self.src = src
        super().__init__(f"{message} at position {pos}")


class EvaluationError(ExpressionError):
    """Raised when an expression is not finite on the requested points."""


# -- syntax tree --------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: object


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
""", re.VERBOSE)


def _tokenize(src: str):
    pos = 0
    tokens = []
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if m is None:
            raise ParseError(f"unexpected character {src[pos]!r}", pos, src)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, tok, what=None):
        kind, text, pos = tok
        if kind == "end":
            raise ParseError(what or "unexpected end of input", pos, self.src)
        raise ParseError(what or f"unexpected {text!r}", pos, self.src)

    def expect(self, text):
        tok = self.take()
        if tok[1] != text:
            self.fail(tok, f"expected {text!r}, found {tok[1] or 'end of input'!r}")
        return tok

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            self.fail(self.peek())
        return node

    def expr(self):
        node = self.term(lead=True)
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            node = BinOp(op, node, self.term(lead=False))
        return node

    def term(self, lead):
        if lead and self.peek()[1] == "-":
            self.take()
            node = Neg(self.power())
        else:
            node = self.power()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            node = BinOp(op, node, self.power())
        return node

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.power())
        return base

    def atom(self):
        tok = self.take()
        kind, text, pos = tok
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if self.peek()[1] == "(":
                if text not in FUNCTIONS:
                    raise ParseError(f"unknown function {text!r}", pos, self.src)
                self.take()
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                arity = FUNCTIONS[text][1]
                if len(args) != arity:
                    raise ParseError(f"{text} takes {arity} argument(s), got {len(args)}", pos, self.src)
                return Call(text, tuple(args))
            if text in VARIABLES:
                return Var(text)
            if text in CONSTANTS:
                return Var(text)
            raise ParseError(f"unknown identifier {text!r}", pos, self.src)
        if text == "(":
            node = self.expr()
            self.expect(")")
            return node
        self.fail(tok)


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4, "atom": 5}


def _prec(node) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _PREC["neg"]
    return _PREC["atom"]


def _fmt_num(v: float) -> str:
    text = repr(float(v))
    if text in ("inf", "nan"):
        raise ExpressionError(f"cannot print non-finite literal {text}")
    return text


def to_source(node, lead: bool = True) -> str:
    """Print a tree so that ``parse(to_source(t)) == t``."""
    if isinstance(node, Num):
        return _fmt_num(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Call):
        return f"{node.name}({', '.join(to_source(a) for a in node.args)})"
    if isinstance(node, Neg):
        inner = node.operand
        body = to_source(inner, lead=False)
        if _prec(inner) < _PREC["^"]:
            body = f"({to_source(inner)})"
        text = "-" + body
        return text if lead else f"({text})"
    op = node.op
    p = _PREC[op]
    if op == "^":
        left_ok = _prec(node.left) > p
        right_ok = _prec(node.right) >= p
    else:
        left_ok = _prec(node.left) >= p
        right_ok = _prec(node.right) > p
    left = to_source(node.left, lead=lead) if left_ok else f"({to_source(node.left)})"
    right = to_source(node.right, lead=False) if right_ok else f"({to_source(node.right)})"
    if op == "^":
        return f"{left}^{right}"
    return f"{left} {op} {right}"


def _eval(node, env):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        if node.name in CONSTANTS:
            return CONSTANTS[node.name]
        try:
            return env[node.name]
        except KeyError:
            raise EvaluationError(f"variable {node.name!r} is not bound here") from None
    if isinstance(node, Neg):
        return -_eval(node.operand, env)
    if isinstance(node, Call):
        fn = FUNCTIONS[node.name][0]
        return fn(*(_eval(a, env) for a in node.args))
    a = _eval(node.left, env)
    b = _eval(node.right, env)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if node.op == "/":
        return np.true_divide(a, b)
    return np.power(np.asarray(a, dtype=float), b)


def _free(node, acc):
    if isinstance(node, Var) and node.name not in CONSTANTS:
        acc.add(node.name)
    elif isinstance(node, Neg):
        _free(node.operand, acc)
    elif isinstance(node, BinOp):
        _free(node.left, acc)
        _free(node.right, acc)
    elif isinstance(node, Call):
        for a in node.args:
            _free(a, acc)
    return acc


class Expression:
    """A parsed expression over the variables x, y, z, r, t."""

    def __init__(self, src: str):
        if not src or not src.strip():
            raise ParseError("empty expression", 0, src)
        self.src = src
        self.tree = _Parser(src).parse()
        self.variables = frozenset(_free(self.tree, set()))

    def __repr__(self):
        return f"Expression({str(self)!r})"

    def __str__(self):
        return to_source(self.tree)

    def __eq__(self, other):
        return isinstance(other, Expression) and self.tree == other.tree

    def __hash__(self):
        return hash(self.tree)

    def __call__(self, **env):
        """Evaluate elementwise; raises EvaluationError on non-finite output."""
        with np.errstate(all="ignore"):
            out = _eval(self.tree, env)
        shape = np.broadcast_shapes(*(np.shape(v) for v in env.values())) if env else ()
        out = np.broadcast_to(np.asarray(out, dtype=float), shape)
        if not np.all(np.isfinite(out)):
            bad = np.argwhere(~np.isfinite(np.atleast_1d(out)))[0]
            raise EvaluationError(f"{self} is not finite at sample index {tuple(bad)}")
        return out


def parse_expression(src: str) -> Expression:
    """Parse ``src``; raises ParseError with the offending position."""
    return Expression(src)
