"""Coefficient expression language.

Expressions are real-valued scalars over the state ``x`` in R^d.  The grammar::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | PARAM | 'x' DIGITS
            | FUNC '(' expr ')' | 'pow' '(' expr ',' expr ')'
            | 'abs' '(' 'x' ')' | 'abs' '(' 'x' '-' 'x0' ')'
            | '|' expr '|' | '(' expr ')'

``x1 .. xd`` are coordinates, ``abs(x)`` is the Euclidean norm and
``abs(x - x0)`` the distance to the model centre.  ``^`` binds tighter than
unary minus, so ``-x1^2`` is ``-(x1^2)``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

FUNCTIONS = ("abs", "cos", "sin", "exp", "ln", "sqrt")


class ExprError(ValueError):
    pass


class ExprSyntaxError(ExprError):
    """Parse failure at byte ``offset`` of the source text."""

    def __init__(self, message: str, offset: int, text: str = ""):
        self.offset = offset
        self.text = text
        super().__init__(f"{message} (at offset {offset})")


class DomainError(ExprError):
    """Evaluation left the real domain (division by zero, ln of a non-positive, ...)."""

    def __init__(self, message: str, point=None):
        self.point = None if point is None else np.asarray(point, dtype=float)
        if self.point is not None:
            message = f"{message} at x={self.point.tolist()}"
        super().__init__(message)


# --------------------------------------------------------------------------- AST

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Coord:
    index: int  # 1-based


@dataclass(frozen=True)
class Norm:
    centered: bool  # |x - x0| if True else |x|


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expr"


Expr = Union[Num, Coord, Norm, Param, Neg, BinOp, Call]


# ---------------------------------------------------------------------- tokenizer

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),|]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExprSyntaxError(f"unexpected character {text[bad]!r}", bad, text)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, d: int, params):
        self.text = text
        self.d = d
        self.params = frozenset(params)
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self, k=0):
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message, tok=None):
        tok = tok or self.peek()
        raise ExprSyntaxError(message, tok[2], self.text)

    def expect(self, value):
        tok = self.peek()
        if tok[1] != value or tok[0] == "end":
            self.error(f"expected {value!r}, found {tok[1] or 'end of input'!r}")
        return self.next()

    def parse(self) -> Expr:
        if self.peek()[0] == "end":
            self.error("empty expression")
        node = self.expr()
        if self.peek()[0] != "end":
            self.error(f"unexpected token {self.peek()[1]!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.next()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.next()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[1] == "-" and self.peek()[0] == "op":
            self.next()
            return Neg(self.unary())
        if self.peek()[1] == "+" and self.peek()[0] == "op":
            self.next()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^":
            self.next()
            return BinOp("^", base, self.unary())
        return base

    def _radial(self, closing):
        # matches `x <closing>` or `x - x0 <closing>` without consuming otherwise
        t0, t1, t2, t3 = self.peek(), self.peek(1), self.peek(2), self.peek(3)
        if t0[:2] == ("name", "x"):
            if t1[1] == closing:
                self.i += 2
                return Norm(False)
            if t1[1] == "-" and t2[:2] == ("name", "x0") and t3[1] == closing:
                self.i += 4
                return Norm(True)
        return None

    def atom(self):
        tok = self.peek()
        kind, value, offset = tok
        if kind == "num":
            self.next()
            return Num(float(value))
        if kind == "op" and value == "(":
            self.next()
            node = self.expr()
            self.expect(")")
            return node
        if kind == "op" and value == "|":
            self.next()
            radial = self._radial("|")
            if radial is not None:
                return radial
            node = self.expr()
            self.expect("|")
            return Call("abs", node)
        if kind == "name":
            self.next()
            if self.peek()[1] == "(":
                return self.call(value, tok)
            return self.identifier(value, tok)
        self.error(f"unexpected token {value or 'end of input'!r}", tok)

    def call(self, name, tok):
        self.next()  # '('
        if name == "pow":
            base = self.expr()
            self.expect(",")
            expo = self.expr()
            self.expect(")")
            return BinOp("^", base, expo)
        if name not in FUNCTIONS:
            self.error(f"unknown function {name!r}", tok)
        if name == "abs":
            radial = self._radial(")")
            if radial is not None:
                return radial
        arg = self.expr()
        self.expect(")")
        return Call(name, arg)

    def identifier(self, name, tok):
        m = re.fullmatch(r"x(\d+)", name)
        if m:
            idx = int(m.group(1))
            if idx == 0:
                self.error("x0 is only valid inside abs(x - x0)", tok)
            if idx > self.d:
                self.error(f"coordinate {name} out of range for dimension {self.d}", tok)
            return Coord(idx)
        if name == "x":
            self.error("bare x is only valid inside abs(x) or abs(x - x0)", tok)
        if name in self.params:
            return Param(name)
        self.error(f"unknown identifier {name!r}", tok)


def parse_expr(text: str, d: int, params=()) -> Expr:
    """Parse ``text`` into an expression tree.

    Raises :class:`ExprSyntaxError` (with ``offset``) on malformed input,
    unknown identifiers and out-of-range coordinates.
    """
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if not text or not text.strip():
        raise ExprSyntaxError("empty expression", 0, text)
    return _Parser(text, d, params).parse()


# ------------------------------------------------------------------ pretty print

def to_text(node: Expr) -> str:
    """Render an expression so that ``parse_expr(to_text(e)) == e``."""
    if isinstance(node, Num):
        if node.value < 0 or not math.isfinite(node.value):
            raise ValueError("only non-negative finite literals are printable")
        return repr(float(node.value))
    if isinstance(node, Coord):
        return f"x{node.index}"
    if isinstance(node, Norm):
        return "abs(x - x0)" if node.centered else "abs(x)"
    if isinstance(node, Param):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_text(node.arg)})"
    if isinstance(node, BinOp):
        return f"({to_text(node.left)} {node.op} {to_text(node.right)})"
    if isinstance(node, Call):
        return f"{node.func}({to_text(node.arg)})"
    raise TypeError(f"not an expression node: {node!r}")


def free_params(node: Expr) -> set[str]:
    if isinstance(node, Param):
        return {node.name}
    if isinstance(node, Neg) or isinstance(node, Call):
        return free_params(node.arg)
    if isinstance(node, BinOp):
        return free_params(node.left) | free_params(node.right)
    return set()


def max_coord(node: Expr) -> int:
    if isinstance(node, Coord):
        return node.index
    if isinstance(node, Neg) or isinstance(node, Call):
        return max_coord(node.arg)
    if isinstance(node, BinOp):
        return max(max_coord(node.left), max_coord(node.right))
    return 0


def is_constant(node: Expr) -> bool:
    """True when the expression does not depend on the state."""
    if isinstance(node, (Coord, Norm)):
        return False
    if isinstance(node, (Neg, Call)):
        return is_constant(node.arg)
    if isinstance(node, BinOp):
        return is_constant(node.left) and is_constant(node.right)
    return True


# -------------------------------------------------------------------- evaluation

_UFUNCS = {"abs": np.abs, "cos": np.cos, "sin": np.sin, "exp": np.exp,
           "ln": np.log, "sqrt": np.sqrt}


def _eval(node, X, params, x0):
    if isinstance(node, Num):
        return np.float64(node.value)
    if isinstance(node, Coord):
        return X[:, node.index - 1]
    if isinstance(node, Norm):
        Y = X - x0 if node.centered else X
        if Y.shape[1] == 1:
            return np.abs(Y[:, 0])
        acc = Y[:, 0] * Y[:, 0]
        for i in range(1, Y.shape[1]):
            acc += Y[:, i] * Y[:, i]
        return np.sqrt(acc)
    if isinstance(node, Param):
        return np.float64(params[node.name])
    if isinstance(node, Neg):
        return -_eval(node.arg, X, params, x0)
    if isinstance(node, Call):
        return _UFUNCS[node.func](_eval(node.arg, X, params, x0))
    left = _eval(node.left, X, params, x0)
    right = _eval(node.right, X, params, x0)
    op = node.op
    if op == "+":
        return left + right
    if op == "-":
        return left - right
    if op == "*":
        return left * right
    if op == "/":
        return np.true_divide(left, right)
    return left ** right


def _locate(node, X, params, x0):
    """Slow path: re-evaluate with per-operation masks to find the offending row."""
    def walk(nd):
        if isinstance(nd, (Num, Coord, Norm, Param)):
            return np.broadcast_to(np.asarray(_eval(nd, X, params, x0), float), (len(X),))
        if isinstance(nd, Neg):
            return -walk(nd.arg)
        if isinstance(nd, Call):
            a = walk(nd.arg)
            bad = ~np.isfinite(a)
            if nd.func == "ln":
                bad |= a <= 0
            elif nd.func == "sqrt":
                bad |= a < 0
            _raise_first(bad, X, f"{nd.func} argument outside domain")
            with np.errstate(all="ignore"):
                out = _UFUNCS[nd.func](a)
            _raise_first(~np.isfinite(out), X, f"{nd.func} overflow")
            return out
        a, b = walk(nd.left), walk(nd.right)
        if nd.op == "/":
            _raise_first(b == 0, X, "division by zero")
        if nd.op == "^":
            nonint = b != np.round(b)
            _raise_first((a < 0) & nonint, X, "non-integer power of a negative base")
            _raise_first((a == 0) & (b < 0), X, "zero raised to a negative power")
        with np.errstate(all="ignore"):
            out = {"+": np.add, "-": np.subtract, "*": np.multiply,
                   "/": np.true_divide, "^": np.power}[nd.op](a, b)
        _raise_first(~np.isfinite(out), X, f"non-finite result of {nd.op!r}")
        return out

    walk(node)


def _raise_first(mask, X, message):
    if np.any(mask):
        k = int(np.argmax(mask))
        raise DomainError(message, X[k])


def evaluate(node: Expr, X, params: Mapping[str, float] | None = None, x0=None) -> np.ndarray:
    """Evaluate ``node`` at the rows of ``X`` (shape ``(N, d)``).

    Returns an array of shape ``(N,)``.  Any floating point exception other
    than underflow is turned into a :class:`DomainError` carrying the first
    offending point.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    params = params or {}
    if x0 is None:
        x0 = np.zeros(X.shape[1])
    try:
        with np.errstate(divide="raise", invalid="raise", over="raise", under="ignore"):
            out = _eval(node, X, params, x0)
    except FloatingPointError:
        _locate(node, X, params, x0)
        raise DomainError("floating point exception during evaluation")
    return np.broadcast_to(np.asarray(out, dtype=float), (X.shape[0],)).copy()
