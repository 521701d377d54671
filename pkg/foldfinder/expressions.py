"""
Arithmetic expressions over x1..xn for user-defined problems.

Grammar (standard precedence, ^ is right-associative and binds tighter
than unary minus, so -x1^2 = -(x1^2)):

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := ("-" | "+") unary | power
    power  := atom ("^" unary)?
    atom   := NUMBER | "pi" | VAR | FUNC "(" expr ("," expr)* ")" | "(" expr ")"

Functions: sin, cos, exp, log (one argument) and pow (two arguments).
Parsed trees are immutable; derivatives are new trees.
"""
import re
from dataclasses import dataclass
from typing import Callable, Dict, List, NamedTuple, Sequence, Tuple

import numpy as np

from .errors import DimensionMismatch, ParseError, UnknownIdentifier

FUNCTIONS: Dict[str, Tuple[int, Callable]] = {
    "sin": (1, np.sin),
    "cos": (1, np.cos),
    "exp": (1, np.exp),
    "log": (1, np.log),
    "pow": (2, np.power),
}
CONSTANTS = {"pi": np.pi}

# ---- syntax tree ---- #


class Node:
    def evaluate(self, env: Sequence[np.ndarray]):
        raise NotImplementedError

    def diff(self, index: int) -> "Node":
        raise NotImplementedError


@dataclass(frozen=True)
class Num(Node):
    value: float

    def evaluate(self, env):
        return self.value

    def diff(self, index):
        return ZERO

    def __str__(self):
        return repr(self.value) if self.value >= 0 else f"({self.value!r})"


@dataclass(frozen=True)
class Var(Node):
    index: int  # 0-based
    name: str = ""

    def evaluate(self, env):
        return env[self.index]

    def diff(self, index):
        return ONE if index == self.index else ZERO

    def __str__(self):
        return self.name or f"x{self.index + 1}"


@dataclass(frozen=True)
class Neg(Node):
    arg: Node

    def evaluate(self, env):
        return -self.arg.evaluate(env)

    def diff(self, index):
        return neg(self.arg.diff(index))

    def __str__(self):
        return f"(-{self.arg})"


@dataclass(frozen=True)
class BinOp(Node):
    op: str
    left: Node
    right: Node

    def evaluate(self, env):
        a = self.left.evaluate(env)
        b = self.right.evaluate(env)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if self.op == "/":
            return a / b
        return np.power(a, b)

    def diff(self, index):
        a, b = self.left, self.right
        da, db = a.diff(index), b.diff(index)
        if self.op == "+":
            return add(da, db)
        if self.op == "-":
            return sub(da, db)
        if self.op == "*":
            return add(mul(da, b), mul(a, db))
        if self.op == "/":
            return div(sub(mul(da, b), mul(a, db)), power(b, Num(2.0)))
        return _diff_power(a, b, da, db)

    def __str__(self):
        return f"({self.left} {self.op} {self.right})"


@dataclass(frozen=True)
class Call(Node):
    name: str
    args: Tuple[Node, ...]

    def evaluate(self, env):
        return FUNCTIONS[self.name][1](*(arg.evaluate(env) for arg in self.args))

    def diff(self, index):
        if self.name == "pow":
            a, b = self.args
            return _diff_power(a, b, a.diff(index), b.diff(index))
        (a,) = self.args
        da = a.diff(index)
        if da == ZERO:
            return ZERO
        if self.name == "sin":
            outer = Call("cos", (a,))
        elif self.name == "cos":
            outer = neg(Call("sin", (a,)))
        elif self.name == "exp":
            outer = self
        else:
            return div(da, a)
        return mul(outer, da)

    def __str__(self):
        return f"{self.name}({', '.join(map(str, self.args))})"


ZERO = Num(0.0)
ONE = Num(1.0)


def _diff_power(a, b, da, db):
    if db == ZERO:
        if isinstance(b, Num):
            return mul(mul(b, power(a, Num(b.value - 1))), da)
        return mul(mul(b, power(a, sub(b, ONE))), da)
    # a^b (b' log a + b a' / a)
    return mul(power(a, b), add(mul(db, Call("log", (a,))), div(mul(b, da), a)))


# Constructors that fold the trivial cases; derivative trees stay small.


def neg(a):
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def add(a, b):
    if a == ZERO:
        return b
    if b == ZERO:
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    return BinOp("+", a, b)


def sub(a, b):
    if b == ZERO:
        return a
    if a == ZERO:
        return neg(b)
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    return BinOp("-", a, b)


def mul(a, b):
    if a == ZERO or b == ZERO:
        return ZERO
    if a == ONE:
        return b
    if b == ONE:
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    return BinOp("*", a, b)


def div(a, b):
    if a == ZERO:
        return ZERO
    if b == ONE:
        return a
    return BinOp("/", a, b)


def power(a, b):
    if b == ZERO:
        return ONE
    if b == ONE:
        return a
    return BinOp("^", a, b)


# ---- tokenizer ---- #


class Token(NamedTuple):
    kind: str  # number, name, op, end
    text: str
    line: int
    column: int


TOKEN_RE = re.compile(
    r"(?P<space>[ \t\r\n]+)"
    r"|(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),−])"
)


def tokenize(source: str) -> List[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(source):
        match = TOKEN_RE.match(source, pos)
        if match is None:
            raise ParseError(
                f"unexpected character {source[pos]!r}", line, pos - line_start + 1
            )
        kind, text = match.lastgroup, match.group()
        if kind == "space":
            newlines = text.count("\n")
            if newlines:
                line += newlines
                line_start = pos + text.rfind("\n") + 1
        else:
            if text == "−":
                text = "-"
            tokens.append(Token(kind, text, line, pos - line_start + 1))
        pos = match.end()
    tokens.append(Token("end", "", line, pos - line_start + 1))
    return tokens


# ---- recursive descent ---- #


class _Parser:
    def __init__(self, source: str, n: int, variables=None):
        self.tokens = tokenize(source)
        self.pos = 0
        self.n = n
        self.variables = list(variables) if variables else None

    @property
    def current(self) -> Token:
        return self.tokens[self.pos]

    def error(self, message, token=None, kind=ParseError):
        token = token or self.current
        return kind(message, token.line, token.column)

    def accept(self, *texts):
        token = self.current
        if token.kind == "op" and token.text in texts:
            self.pos += 1
            return token
        return None

    def expect(self, text):
        if self.accept(text) is None:
            found = self.current.text or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}")

    def parse(self) -> Node:
        tree = self.expr()
        if self.current.kind != "end":
            raise self.error(f"unexpected {self.current.text!r}")
        return tree

    def expr(self):
        node = self.term()
        while True:
            token = self.accept("+", "-")
            if token is None:
                return node
            right = self.term()
            node = BinOp(token.text, node, right)

    def term(self):
        node = self.unary()
        while True:
            token = self.accept("*", "/")
            if token is None:
                return node
            node = BinOp(token.text, node, self.unary())

    def unary(self):
        if self.accept("-"):
            return neg(self.unary())
        if self.accept("+"):
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.accept("^"):
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        token = self.current
        if token.kind == "number":
            self.pos += 1
            return Num(float(token.text))
        if token.kind == "name":
            self.pos += 1
            return self.name(token)
        if self.accept("("):
            node = self.expr()
            self.expect(")")
            return node
        found = token.text or "end of input"
        raise self.error(f"expected an operand, found {found!r}")

    def name(self, token):
        text = token.text
        if text in FUNCTIONS:
            arity = FUNCTIONS[text][0]
            self.expect("(")
            args = [self.expr()]
            while self.accept(","):
                args.append(self.expr())
            self.expect(")")
            if len(args) != arity:
                raise self.error(
                    f"{text} takes {arity} argument(s), got {len(args)}", token
                )
            return Call(text, tuple(args))
        if text in CONSTANTS:
            return Num(CONSTANTS[text])
        if self.variables is not None:
            if text in self.variables:
                return Var(self.variables.index(text), text)
            names = ", ".join(self.variables)
        else:
            match = re.fullmatch(r"x([1-9][0-9]*)", text)
            if match and int(match.group(1)) <= self.n:
                return Var(int(match.group(1)) - 1)
            names = f"x1..x{self.n}"
        raise self.error(
            f"unknown identifier {text!r} (variables are {names})",
            token,
            UnknownIdentifier,
        )


def parse_expression(source: str, n: int, variables=None) -> Node:
    return _Parser(source, n, variables).parse()


class Expression:
    """A parsed expression, callable on a point (n,) or a batch (n, m)."""

    def __init__(self, source: str, n: int, tree: Node = None, variables=None):
        self.source = source
        self.n = n
        self.tree = parse_expression(source, n, variables) if tree is None else tree
        self._derivatives: Dict[int, "Expression"] = {}

    def __repr__(self):
        return f"Expression({self.source!r})"

    def __str__(self):
        return str(self.tree)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.n:
            raise DimensionMismatch(f"expected {self.n} coordinates, got {x.shape[0]}")
        with np.errstate(all="ignore"):
            value = self.tree.evaluate(list(x))
        return np.broadcast_to(np.asarray(value, dtype=float), x.shape[1:]) + 0.0

    def derivative(self, index: int) -> "Expression":
        if index not in self._derivatives:
            tree = self.tree.diff(index)
            self._derivatives[index] = Expression(str(tree), self.n, tree)
        return self._derivatives[index]


def compile_vector(sources: Sequence[str], n: int):
    """(value, jacobian) callables for a list of n expression strings."""
    if len(sources) != n:
        raise DimensionMismatch(f"expected {n} expressions, got {len(sources)}")
    expressions = [Expression(src, n) for src in sources]
    derivatives = [[e.derivative(j) for j in range(n)] for e in expressions]

    def value(x):
        return np.stack([e(x) for e in expressions])

    def jacobian(x):
        return np.array([[d(x) for d in row] for row in derivatives], dtype=float)

    return value, jacobian
