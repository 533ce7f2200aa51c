"""A small expression language for scoring heuristics.

Grammar (whitespace insignificant)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := "-" unary | atom
    atom   := NUMBER | IDENT | IDENT "(" expr ("," expr)* ")" | "(" expr ")"

Comparisons and conditionals are only available as named functions.  Booleans
are reals: comparisons return 1.0 or 0.0 and ``if`` tests for non-zero.
"""

from __future__ import annotations

import functools
import math
import random
import re
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence, Union

DEFAULT_MAX_SIZE = 64

# name -> arity
FUNCTIONS: dict[str, int] = {
    "min": 2,
    "max": 2,
    "pow": 2,
    "lt": 2,
    "le": 2,
    "gt": 2,
    "ge": 2,
    "eq": 2,
    "abs": 1,
    "log": 1,
    "exp": 1,
    "if": 3,
}

BINARY_OPS = ("+", "-", "*", "/")
_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}
_NEG_PREC = 3
_ATOM_PREC = 4


class DslError(Exception):
    """Base class for everything the DSL raises."""


class DslParseError(DslError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class DslLexError(DslParseError):
    pass


class DslSyntaxError(DslParseError):
    pass


class UnknownFunction(DslParseError):
    pass


class UnboundVariable(DslError):
    def __init__(self, name: str):
        super().__init__(f"unbound variable {name!r}")
        self.name = name


class DomainError(DslError):
    """Arithmetic left the finite reals (division by zero, log of a non-positive, overflow...)."""


# --- AST ---------------------------------------------------------------------


@dataclass(frozen=True)
class Number:
    value: float

    def __post_init__(self):
        v = float(self.value)
        if not math.isfinite(v) or v < 0:
            raise ValueError(f"Number literal must be finite and non-negative, got {self.value!r}")
        # normalise -0.0
        object.__setattr__(self, "value", v + 0.0)


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"

    def __post_init__(self):
        if self.op not in _PREC:
            raise ValueError(f"unknown binary operator {self.op!r}")


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple

    def __post_init__(self):
        if self.fn not in FUNCTIONS:
            raise ValueError(f"unknown function {self.fn!r}")
        object.__setattr__(self, "args", tuple(self.args))
        if len(self.args) != FUNCTIONS[self.fn]:
            raise ValueError(f"{self.fn} takes {FUNCTIONS[self.fn]} arguments, got {len(self.args)}")


Expr = Union[Number, Var, Neg, BinOp, Call]


def Add(a, b):
    return BinOp("+", a, b)


def Sub(a, b):
    return BinOp("-", a, b)


def Mul(a, b):
    return BinOp("*", a, b)


def Div(a, b):
    return BinOp("/", a, b)


def children(node: Expr) -> tuple:
    if isinstance(node, Neg):
        return (node.arg,)
    if isinstance(node, BinOp):
        return (node.left, node.right)
    if isinstance(node, Call):
        return node.args
    return ()


def with_children(node: Expr, kids: Sequence[Expr]) -> Expr:
    if isinstance(node, Neg):
        return Neg(kids[0])
    if isinstance(node, BinOp):
        return BinOp(node.op, kids[0], kids[1])
    if isinstance(node, Call):
        return Call(node.fn, tuple(kids))
    return node


def walk(node: Expr):
    """Yield ``(path, node)`` in pre-order; a path is a tuple of child indices."""
    stack = [((), node)]
    while stack:
        path, n = stack.pop()
        yield path, n
        kids = children(n)
        for i in range(len(kids) - 1, -1, -1):
            stack.append((path + (i,), kids[i]))


def replace_at(node: Expr, path: tuple, new: Expr) -> Expr:
    if not path:
        return new
    kids = list(children(node))
    kids[path[0]] = replace_at(kids[path[0]], path[1:], new)
    return with_children(node, kids)


def complexity(expr: Expr) -> int:
    """Number of AST nodes."""
    return sum(1 for _ in walk(expr))


def variables(expr: Expr) -> set[str]:
    return {n.name for _, n in walk(expr) if isinstance(n, Var)}


# --- lexer / parser ----------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/(),])
    """,
    re.VERBOSE,
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise DslLexError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, pos = self.peek()
        if text != value or kind == "end":
            where = "end of input" if kind == "end" else repr(text)
            raise DslSyntaxError(f"expected {value!r} but found {where}", pos)
        return self.advance()

    def parse(self) -> Expr:
        e = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise DslSyntaxError(f"unexpected {text!r}", pos)
        return e

    def expr(self) -> Expr:
        left = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.advance()[1]
            left = BinOp(op, left, self.term())
        return left

    def term(self) -> Expr:
        left = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.advance()[1]
            left = BinOp(op, left, self.unary())
        return left

    def unary(self) -> Expr:
        if self.peek()[:2] == ("op", "-"):
            self.advance()
            return Neg(self.unary())
        return self.atom()

    def atom(self) -> Expr:
        kind, text, pos = self.advance()
        if kind == "num":
            return Number(float(text))
        if kind == "ident":
            if self.peek()[:2] != ("op", "("):
                return Var(text)
            fn = text.lower()
            if fn not in FUNCTIONS:
                raise UnknownFunction(f"unknown function {text!r}", pos)
            self.advance()
            args = [self.expr()]
            while self.peek()[:2] == ("op", ","):
                self.advance()
                args.append(self.expr())
            self.expect(")")
            if len(args) != FUNCTIONS[fn]:
                raise DslSyntaxError(
                    f"{fn} takes {FUNCTIONS[fn]} argument(s), got {len(args)}", pos
                )
            return Call(fn, tuple(args))
        if (kind, text) == ("op", "("):
            inner = self.expr()
            self.expect(")")
            return inner
        where = "end of input" if kind == "end" else repr(text)
        raise DslSyntaxError(f"unexpected {where}", pos)


def parse(text: str) -> Expr:
    return _Parser(text).parse()


# --- printer -----------------------------------------------------------------


def _format_number(v: float) -> str:
    if v.is_integer() and v < 1e16:
        return str(int(v))
    return repr(v)


def _prec(node: Expr) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _NEG_PREC
    return _ATOM_PREC


def to_text(expr: Expr) -> str:
    """Canonical text: minimal parentheses, spaced binary operators."""
    if isinstance(expr, Number):
        return _format_number(expr.value)
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, Neg):
        inner = to_text(expr.arg)
        if _prec(expr.arg) < _NEG_PREC:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(expr, BinOp):
        p = _PREC[expr.op]
        left = to_text(expr.left)
        right = to_text(expr.right)
        if _prec(expr.left) < p:
            left = f"({left})"
        # left associative: an equal-precedence right operand needs parentheses
        if _prec(expr.right) <= p:
            right = f"({right})"
        return f"{left} {expr.op} {right}"
    if isinstance(expr, Call):
        return f"{expr.fn}({', '.join(to_text(a) for a in expr.args)})"
    raise TypeError(f"not an expression node: {expr!r}")


# --- evaluation --------------------------------------------------------------


def _check(x: float) -> float:
    if not math.isfinite(x):
        raise DomainError("non-finite intermediate value")
    return x


def _div(a, b):
    if b == 0:
        raise DomainError("division by zero")
    return _check(a / b)


def _log(a):
    if a <= 0:
        raise DomainError(f"log of non-positive value {a!r}")
    return _check(math.log(a))


def _exp(a):
    try:
        return _check(math.exp(a))
    except OverflowError:
        raise DomainError("exp overflow") from None


def _pow(a, b):
    try:
        return _check(math.pow(a, b))
    except (OverflowError, ValueError, ZeroDivisionError) as exc:
        raise DomainError(f"pow({a!r}, {b!r}): {exc}") from None


_ARITH = {
    "+": lambda a, b: _check(a + b),
    "-": lambda a, b: _check(a - b),
    "*": lambda a, b: _check(a * b),
    "/": _div,
}

_FN_IMPL = {
    "min": lambda a, b: min(a, b),
    "max": lambda a, b: max(a, b),
    "pow": _pow,
    "lt": lambda a, b: 1.0 if a < b else 0.0,
    "le": lambda a, b: 1.0 if a <= b else 0.0,
    "gt": lambda a, b: 1.0 if a > b else 0.0,
    "ge": lambda a, b: 1.0 if a >= b else 0.0,
    "eq": lambda a, b: 1.0 if a == b else 0.0,
    "abs": lambda a: abs(a),
    "log": _log,
    "exp": _exp,
}


def _build(node: Expr) -> Callable[[Mapping[str, float]], float]:
    if isinstance(node, Number):
        v = node.value
        return lambda env: v
    if isinstance(node, Var):
        name = node.name

        def var(env):
            try:
                return env[name]
            except KeyError:
                raise UnboundVariable(name) from None

        return var
    if isinstance(node, Neg):
        f = _build(node.arg)
        return lambda env: -f(env)
    if isinstance(node, BinOp):
        op = _ARITH[node.op]
        a, b = _build(node.left), _build(node.right)
        return lambda env: op(a(env), b(env))
    if isinstance(node, Call):
        fs = [_build(arg) for arg in node.args]
        if node.fn == "if":
            c, t, e = fs
            # only the taken branch is evaluated
            return lambda env: t(env) if c(env) != 0 else e(env)
        impl = _FN_IMPL[node.fn]
        if len(fs) == 1:
            (a,) = fs
            return lambda env: impl(a(env))
        a, b = fs
        return lambda env: impl(a(env), b(env))
    raise TypeError(f"not an expression node: {node!r}")


@functools.lru_cache(maxsize=4096)
def compile_expr(expr: Expr) -> Callable[[Mapping[str, float]], float]:
    """Compile ``expr`` into a closure taking an environment mapping.

    The closure raises the same errors as :func:`evaluate` but skips the
    per-call environment check, so callers must supply finite values.
    """
    return _build(expr)


def evaluate(expr: Expr, env: Mapping[str, float]) -> float:
    for name, value in env.items():
        if not math.isfinite(value):
            raise ValueError(f"environment value for {name!r} is not finite")
    return float(compile_expr(expr)(env))


# --- random generation and mutation -----------------------------------------


def random_number(rng: random.Random) -> Number:
    return Number(round(rng.uniform(0.0, 10.0), 2))


def random_leaf(rng: random.Random, vars: Sequence[str]) -> Expr:
    if vars and rng.random() < 0.6:
        return Var(rng.choice(list(vars)))
    return random_number(rng)


def random_expr(rng: random.Random, vars: Sequence[str], depth: int = 3) -> Expr:
    """A random expression of depth at most ``depth`` (a leaf has depth 0)."""
    if depth <= 0 or rng.random() < 0.3:
        return random_leaf(rng, vars)
    r = rng.random()
    if r < 0.55:
        return BinOp(rng.choice(BINARY_OPS), random_expr(rng, vars, depth - 1),
                     random_expr(rng, vars, depth - 1))
    if r < 0.65:
        return Neg(random_expr(rng, vars, depth - 1))
    fn = rng.choice(sorted(FUNCTIONS))
    return Call(fn, tuple(random_expr(rng, vars, depth - 1) for _ in range(FUNCTIONS[fn])))


def _perturb_number(expr, rng, vars):
    paths = [p for p, n in walk(expr) if isinstance(n, Number)]
    path = rng.choice(paths)
    old = _node_at(expr, path).value
    new = float(f"{old * rng.uniform(0.5, 1.5):.6g}")
    return replace_at(expr, path, Number(new))


def _swap_operator(expr, rng, vars):
    paths = [p for p, n in walk(expr) if isinstance(n, BinOp)]
    path = rng.choice(paths)
    node = _node_at(expr, path)
    op = rng.choice([o for o in BINARY_OPS if o != node.op])
    return replace_at(expr, path, BinOp(op, node.left, node.right))


def _replace_leaf(expr, rng, vars):
    paths = [p for p, n in walk(expr) if not children(n)]
    return replace_at(expr, rng.choice(paths), random_leaf(rng, vars))


def _replace_subtree(expr, rng, vars):
    paths = [p for p, _ in walk(expr)]
    return replace_at(expr, rng.choice(paths), random_expr(rng, vars, depth=2))


def _node_at(expr: Expr, path: tuple) -> Expr:
    for i in path:
        expr = children(expr)[i]
    return expr


def mutate(expr: Expr, rng: random.Random, vars: Sequence[str],
           max_size: int = DEFAULT_MAX_SIZE) -> Expr:
    """Apply exactly one random syntactic edit.

    Edits: scale a literal by U(0.5, 1.5), swap a binary operator, replace a
    leaf, or replace a subtree with a fresh depth-2 expression.  Results larger
    than ``max_size`` are retried; after a few attempts a leaf replacement is
    used, which never grows the tree.
    """
    vars = sorted(vars)
    for _ in range(8):
        edits = [_replace_leaf, _replace_subtree]
        if any(isinstance(n, Number) for _, n in walk(expr)):
            edits.append(_perturb_number)
        if any(isinstance(n, BinOp) for _, n in walk(expr)):
            edits.append(_swap_operator)
        edit = rng.choice(edits)
        out = edit(expr, rng, vars)
        if complexity(out) <= max_size:
            return out
    return _replace_leaf(expr, rng, vars)
