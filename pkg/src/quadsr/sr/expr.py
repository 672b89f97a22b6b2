"""Expression trees for symbolic regression.

Trees are immutable nested dataclasses over a fixed primitive set:
constants, variables, sin/cos (optionally sqrt), and the four arithmetic
operators.  Division is guarded: a denominator with magnitude below
DIV_GUARD evaluates to NaN rather than adopting any protected-division
convention, and NaN anywhere makes a candidate's fitness infinite.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

import numpy as np

DIV_GUARD = 1e-12

BINARY_OPS = ("+", "-", "*", "/")
UNARY_OPS = ("sin", "cos")
OPTIONAL_UNARY_OPS = ("sqrt",)

# Canonical feature naming for the flight-data domain; fits use subsets.
FEATURE_NAMES = ("x", "y", "z", "vx", "vy", "vz", "phi", "theta", "psi",
                 "wx", "wy", "wz", "u1", "u2", "u3", "u4")


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    index: int


@dataclass(frozen=True)
class Unary:
    op: str
    arg: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Union[Const, Var, Unary, Binary]


def node_count(tree: Expr) -> int:
    """Complexity measure: the exact number of nodes."""
    if isinstance(tree, (Const, Var)):
        return 1
    if isinstance(tree, Unary):
        return 1 + node_count(tree.arg)
    return 1 + node_count(tree.left) + node_count(tree.right)


def depth(tree: Expr) -> int:
    """Tree depth; a single leaf has depth 1."""
    if isinstance(tree, (Const, Var)):
        return 1
    if isinstance(tree, Unary):
        return 1 + depth(tree.arg)
    return 1 + max(depth(tree.left), depth(tree.right))


def _eval(tree: Expr, X: np.ndarray) -> np.ndarray:
    n = X.shape[0]
    if isinstance(tree, Const):
        return np.full(n, tree.value)
    if isinstance(tree, Var):
        return X[:, tree.index]
    if isinstance(tree, Unary):
        a = _eval(tree.arg, X)
        if tree.op == "sin":
            return np.sin(a)
        if tree.op == "cos":
            return np.cos(a)
        if tree.op == "sqrt":
            return np.sqrt(a)
        raise ValueError(f"unknown unary op {tree.op!r}")
    l = _eval(tree.left, X)
    r = _eval(tree.right, X)
    if tree.op == "+":
        return l + r
    if tree.op == "-":
        return l - r
    if tree.op == "*":
        return l * r
    if tree.op == "/":
        out = l / r
        return np.where(np.abs(r) < DIV_GUARD, np.nan, out)
    raise ValueError(f"unknown binary op {tree.op!r}")


def eval_tree(tree: Expr, features: np.ndarray):
    """Evaluate a tree on one feature vector (1-D) or a batch (2-D).

    Returns a float for a single vector, an array for a batch.  Guarded
    divisions and domain errors surface as NaN, overflow as inf.
    """
    X = np.asarray(features, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    with np.errstate(all="ignore"):
        out = _eval(tree, X)
    return float(out[0]) if single else out


def render(tree: Expr, names: tuple[str, ...] = FEATURE_NAMES) -> str:
    """Render a tree as infix text parseable by parse_expr."""
    return _render(tree, names, 0)


def _render(tree: Expr, names: tuple[str, ...], parent_prec: int) -> str:
    if isinstance(tree, Const):
        s = repr(float(tree.value))
        if tree.value < 0.0 and parent_prec > 0:
            return "(" + s + ")"
        return s
    if isinstance(tree, Var):
        return names[tree.index]
    if isinstance(tree, Unary):
        return f"{tree.op}({_render(tree.arg, names, 0)})"
    prec = 1 if tree.op in ("+", "-") else 2
    left = _render(tree.left, names, prec - 1)
    # Right operand needs parens at equal precedence: - and / are
    # left-associative, and a*(b+c) obviously differs from a*b+c.
    right = _render(tree.right, names, prec)
    s = f"{left} {tree.op} {right}"
    if prec < parent_prec or (prec == parent_prec and parent_prec > 0):
        return "(" + s + ")"
    return s


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))")

_FUNCS = ("sin", "cos", "sqrt")


class ParseError(ValueError):
    pass


def _tokenize(text: str) -> list[str]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            if text[pos:].strip() == "":
                break
            raise ParseError(f"unexpected character at {pos}: {text[pos:]!r}")
        tokens.append(m.group(m.lastgroup))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, tokens: list[str], names: tuple[str, ...]):
        self.tokens = tokens
        self.pos = 0
        self.index = {n: i for i, n in enumerate(names)}

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self):
        tok = self.peek()
        if tok is None:
            raise ParseError("unexpected end of expression")
        self.pos += 1
        return tok

    def expect(self, tok: str):
        got = self.take()
        if got != tok:
            raise ParseError(f"expected {tok!r}, got {got!r}")

    def expr(self) -> Expr:
        node = self.term()
        while self.peek() in ("+", "-"):
            op = self.take()
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.peek() in ("*", "/"):
            op = self.take()
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.peek() == "-":
            self.take()
            inner = self.unary()
            if isinstance(inner, Const):
                return Const(-inner.value)
            return Binary("-", Const(0.0), inner)
        if self.peek() == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek() == "^":
            self.take()
            tok = self.take()
            try:
                exp = int(tok)
            except ValueError:
                raise ParseError(f"exponent must be a non-negative integer, "
                                 f"got {tok!r}") from None
            if exp < 0:
                raise ParseError("exponent must be non-negative")
            if exp == 0:
                return Const(1.0)
            node = base
            for _ in range(exp - 1):
                node = Binary("*", node, base)
            return node
        return base

    def atom(self) -> Expr:
        tok = self.take()
        if tok == "(":
            node = self.expr()
            self.expect(")")
            return node
        if re.fullmatch(r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?", tok):
            return Const(float(tok))
        if tok in _FUNCS:
            self.expect("(")
            node = self.expr()
            self.expect(")")
            return Unary(tok, node)
        if tok in self.index:
            return Var(self.index[tok])
        raise ParseError(f"unknown identifier {tok!r}")


def parse_expr(text: str, names: tuple[str, ...] = FEATURE_NAMES) -> Expr:
    """Parse infix expression text into a tree.

    Whitespace-insensitive; accepts numbers, the given variable names,
    + - * /, integer powers via ^ (expanded into products), and
    sin/cos/sqrt calls.
    """
    p = _Parser(_tokenize(text), names)
    node = p.expr()
    if p.peek() is not None:
        raise ParseError(f"trailing tokens starting at {p.peek()!r}")
    return node


def _is_const(tree: Expr, value: float | None = None) -> bool:
    if not isinstance(tree, Const):
        return False
    return value is None or tree.value == value


def simplify(tree: Expr) -> Expr:
    """Constant folding and identity elimination.

    Preserves the evaluated function everywhere except at guarded-division
    points; never increases node count.
    """
    if isinstance(tree, (Const, Var)):
        return tree
    if isinstance(tree, Unary):
        arg = simplify(tree.arg)
        if isinstance(arg, Const):
            v = eval_tree(Unary(tree.op, arg), np.zeros(1))
            if np.isfinite(v):
                return Const(float(v))
        return Unary(tree.op, arg)

    left = simplify(tree.left)
    right = simplify(tree.right)
    op = tree.op

    if isinstance(left, Const) and isinstance(right, Const):
        if not (op == "/" and abs(right.value) < DIV_GUARD):
            v = eval_tree(Binary(op, left, right), np.zeros(1))
            if np.isfinite(v):
                return Const(float(v))

    if op == "+":
        if _is_const(left, 0.0):
            return right
        if _is_const(right, 0.0):
            return left
    elif op == "-":
        if _is_const(right, 0.0):
            return left
        if left == right:
            return Const(0.0)
        # double negation: 0 - (0 - x) -> x
        if (_is_const(left, 0.0) and isinstance(right, Binary)
                and right.op == "-" and _is_const(right.left, 0.0)):
            return right.right
    elif op == "*":
        if _is_const(left, 1.0):
            return right
        if _is_const(right, 1.0):
            return left
        if _is_const(left, 0.0) or _is_const(right, 0.0):
            return Const(0.0)
    elif op == "/":
        if _is_const(right, 1.0):
            return left
        if _is_const(left, 0.0) and isinstance(right, Const) \
                and abs(right.value) >= DIV_GUARD:
            return Const(0.0)

    return Binary(op, left, right)


def substitute_vars(tree: Expr, mapping: dict[int, Expr]) -> Expr:
    """Replace Var(index) nodes by replacement subtrees.

    Used to return expressions in original units after fitting on
    rescaled features: substituting Var(i) -> Var(i)/scale undoes an
    internal x_i/scale normalization exactly (the replacement reproduces
    the same floating-point values the fit saw).
    """
    if isinstance(tree, Const):
        return tree
    if isinstance(tree, Var):
        return mapping.get(tree.index, tree)
    if isinstance(tree, Unary):
        return Unary(tree.op, substitute_vars(tree.arg, mapping))
    return Binary(tree.op, substitute_vars(tree.left, mapping),
                  substitute_vars(tree.right, mapping))
