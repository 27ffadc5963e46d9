"""Small infix expression language for Lagrangians and constraint integrands.

Expressions are written over ``x``, ``y1..yN`` (trajectory components),
``v1..vN`` (combined fractional derivative of each component) and named
parameters declared up front. ``y`` and ``v`` alias ``y1`` and ``v1`` when
``N == 1``.

>>> e = parse("sin(x)*v1 + y1^2", 1)
>>> e.eval(Bindings(x=0.0, y=[2.0], v=[3.0]))
4.0
>>> str(e.diff("v1"))
'sin(x)'

Evaluation is vectorized: any binding may be a numpy array, in which case
the result is an array and errors report the first offending index.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np

__all__ = [
    "ExprError",
    "ParseError",
    "EvaluationError",
    "Const",
    "Var",
    "Param",
    "Unary",
    "Binary",
    "ExprAst",
    "Bindings",
    "parse",
    "evaluate",
    "diff",
    "simplify",
]


class ExprError(ValueError):
    """Base class for expression errors."""


class ParseError(ExprError):
    def __init__(self, message: str, pos: int | None = None, text: str | None = None):
        self.pos = pos
        if pos is not None:
            message = f"{message} at position {pos}"
            if text is not None:
                message += f": {text!r}"
        super().__init__(message)


class EvaluationError(ExprError):
    def __init__(self, message: str, index: int | None = None):
        self.index = index
        if index is not None:
            message = f"{message} (node {index})"
        super().__init__(message)


# -- nodes -------------------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    kind: str  # "x", "y" or "v"
    index: int = 0  # 1-based for y and v

    @property
    def name(self) -> str:
        return "x" if self.kind == "x" else f"{self.kind}{self.index}"


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str
    arg: "Node"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Node"
    right: "Node"


Node = Union[Const, Var, Param, Unary, Binary]

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "abs", "sign")
CONSTANTS = {"pi": math.pi, "e": math.e}
_VAR_RE = re.compile(r"([yv])(\d+)$")

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


@dataclass(frozen=True)
class ExprAst:
    """A parsed expression together with its dimension and parameter names.

    Equality is structural.
    """

    root: Node
    n_dims: int
    params: frozenset = field(default_factory=frozenset)

    def __str__(self) -> str:
        return to_string(self.root)

    def eval(self, bindings: "Bindings"):
        return evaluate(self, bindings)

    def diff(self, var) -> "ExprAst":
        return diff(self, var)

    def simplify(self) -> "ExprAst":
        return simplify(self)

    def depends_on(self, var) -> bool:
        return _depends(self.root, _resolve_var(var, self.n_dims))

    @property
    def is_constant_zero(self) -> bool:
        return isinstance(self.root, Const) and self.root.value == 0.0


# -- parsing -----------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(text: str):
    pos = 0
    tokens = []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            skipped = len(text[pos:]) - len(text[pos:].lstrip())
            raise ParseError(f"unexpected character {text[pos + skipped]!r}", pos + skipped, text)
        start = m.start(m.lastgroup)
        tokens.append((m.lastgroup, m.group(m.lastgroup), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, n_dims: int, params: frozenset):
        self.text = text
        self.n_dims = n_dims
        self.params = params
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.take()
        if val != value:
            found = "end of input" if kind == "end" else repr(val)
            raise ParseError(f"expected {value!r}, found {found}", pos, self.text)

    def parse(self) -> Node:
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected {val!r}", pos, self.text)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> Node:
        kind, val, _ = self.peek()
        if kind == "op" and val in ("-", "+"):
            self.take()
            literal = self.peek()[0] == "num"
            operand = self.unary()
            if val == "+":
                return operand
            if literal and isinstance(operand, Const):
                return Const(-operand.value)
            return Unary("neg", operand)
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek()[1] == "^" and self.peek()[0] == "op":
            self.take()
            return Binary("^", base, self.unary())
        return base

    def atom(self) -> Node:
        kind, val, pos = self.take()
        if kind == "num":
            return Const(float(val))
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "name":
            if self.peek()[1] == "(":
                if val not in FUNCTIONS:
                    raise ParseError(f"unknown function {val!r}", pos, self.text)
                self.take()
                arg = self.expr()
                self.expect(")")
                return Unary(val, arg)
            return self.identifier(val, pos)
        if kind == "end":
            raise ParseError("unexpected end of input", pos, self.text)
        raise ParseError(f"unexpected {val!r}", pos, self.text)

    def identifier(self, name: str, pos: int) -> Node:
        if name == "x":
            return Var("x")
        if name in ("y", "v"):
            if self.n_dims != 1:
                raise ParseError(f"bare {name!r} is only allowed when N == 1", pos, self.text)
            return Var(name, 1)
        m = _VAR_RE.match(name)
        if m:
            idx = int(m.group(2))
            if not 1 <= idx <= self.n_dims:
                raise ParseError(
                    f"index of {name!r} out of range 1..{self.n_dims}", pos, self.text
                )
            return Var(m.group(1), idx)
        if name in self.params:
            return Param(name)
        if name in CONSTANTS:
            return Const(CONSTANTS[name])
        if name in FUNCTIONS:
            raise ParseError(f"function {name!r} needs an argument", pos, self.text)
        raise ParseError(f"unknown identifier {name!r}", pos, self.text)


def _is_reserved(name: str) -> bool:
    return (
        name in ("x", "y", "v")
        or name in FUNCTIONS
        or name in CONSTANTS
        or _VAR_RE.match(name) is not None
    )


def parse(text: str, n_dims: int = 1, params: Sequence[str] = ()) -> ExprAst:
    """Parse ``text`` into an :class:`ExprAst` over ``n_dims`` components.

    ``params`` lists the names that may appear as free parameters; any other
    unknown identifier is an error.
    """
    if not isinstance(text, str) or not text.strip():
        raise ParseError("expression must be a non-empty string")
    if int(n_dims) != n_dims or n_dims < 1:
        raise ValueError(f"n_dims must be a positive integer, got {n_dims!r}")
    names = frozenset(params)
    for name in names:
        if not re.fullmatch(r"[A-Za-z_]\w*", name) or _is_reserved(name):
            raise ParseError(f"invalid parameter name {name!r}")
    root = _Parser(text, int(n_dims), names).parse()
    return ExprAst(root, int(n_dims), names)


# -- printing ----------------------------------------------------------------


def _fmt_const(c: float) -> str:
    if c.is_integer() and abs(c) < 1e15:
        return str(int(c))
    return repr(c)


def _prec(node: Node) -> int:
    if isinstance(node, Binary):
        return _PREC[node.op]
    if isinstance(node, Unary) and node.op == "neg":
        return _PREC["neg"]
    if isinstance(node, Const) and node.value < 0:
        return _PREC["neg"]
    return 5


def to_string(node: Node) -> str:
    """Render ``node`` with the minimal parentheses that reparse to the same tree."""
    if isinstance(node, Const):
        return _fmt_const(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Param):
        return node.name
    if isinstance(node, Unary):
        if node.op == "neg":
            inner = to_string(node.arg)
            if _prec(node.arg) < _PREC["neg"] or isinstance(node.arg, Const):
                inner = f"({inner})"
            return f"-{inner}"
        return f"{node.op}({to_string(node.arg)})"
    p = _PREC[node.op]
    left, right = to_string(node.left), to_string(node.right)
    if node.op == "^":
        if _prec(node.left) <= p:
            left = f"({left})"
        if _prec(node.right) < _PREC["neg"]:
            right = f"({right})"
        return f"{left}^{right}"
    if _prec(node.left) < p:
        left = f"({left})"
    if _prec(node.right) <= p:
        right = f"({right})"
    return f"{left} {node.op} {right}" if p == 1 else f"{left}*{right}" if node.op == "*" else f"{left}/{right}"


# -- evaluation --------------------------------------------------------------


@dataclass
class Bindings:
    """Values for ``x``, ``y``, ``v`` and named parameters.

    Scalars or equally shaped numpy arrays may be mixed freely.
    """

    x: object
    y: Sequence = ()
    v: Sequence = ()
    params: Mapping[str, object] = field(default_factory=dict)


def _first_bad(mask) -> int | None:
    mask = np.asarray(mask)
    if mask.ndim == 0:
        return None
    return int(np.flatnonzero(mask.ravel())[0])


def _check(result, what: str):
    bad = ~np.isfinite(result)
    if np.any(bad):
        raise EvaluationError(f"{what} produced a non-finite value", _first_bad(bad))
    return result


def _eval(node: Node, b: Bindings):
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        if node.kind == "x":
            return b.x
        seq = b.y if node.kind == "y" else b.v
        return seq[node.index - 1]
    if isinstance(node, Param):
        try:
            return b.params[node.name]
        except KeyError:
            raise EvaluationError(f"no value bound for parameter {node.name!r}") from None
    if isinstance(node, Unary):
        u = np.asarray(_eval(node.arg, b), dtype=float)
        op = node.op
        if op == "neg":
            return -u
        if op == "log" and np.any(u <= 0):
            raise EvaluationError("log of a nonpositive value", _first_bad(u <= 0))
        if op == "sqrt" and np.any(u < 0):
            raise EvaluationError("sqrt of a negative value", _first_bad(u < 0))
        if op == "sign" and np.any(u == 0):
            raise EvaluationError("derivative of abs is undefined at 0", _first_bad(u == 0))
        with np.errstate(all="ignore"):
            out = getattr(np, op)(u)
        return _check(out, op)
    u = np.asarray(_eval(node.left, b), dtype=float)
    w = np.asarray(_eval(node.right, b), dtype=float)
    with np.errstate(all="ignore"):
        if node.op == "+":
            out = u + w
        elif node.op == "-":
            out = u - w
        elif node.op == "*":
            out = u * w
        elif node.op == "/":
            if np.any(w == 0):
                raise EvaluationError("division by zero", _first_bad(np.broadcast_to(w == 0, np.broadcast(u, w).shape)))
            out = u / w
        else:
            if np.any((u == 0) & (w < 0)):
                raise EvaluationError("zero raised to a negative power", _first_bad((u == 0) & (w < 0)))
            out = np.power(u, w)
    return _check(out, f"operator {node.op!r}")


def evaluate(ast: ExprAst, bindings: Bindings):
    """Evaluate ``ast``; returns a float for scalar bindings, else an array."""
    n = ast.n_dims
    if len(bindings.y) != n or len(bindings.v) != n:
        raise ValueError(
            f"expression has N={n} but bindings carry {len(bindings.y)} y and "
            f"{len(bindings.v)} v values"
        )
    out = _eval(ast.root, bindings)
    if np.ndim(out) == 0:
        return float(out)
    return np.asarray(out, dtype=float)


# -- differentiation ---------------------------------------------------------


def _resolve_var(var, n_dims: int) -> Var:
    if isinstance(var, Var):
        v = var
    elif var == "x":
        v = Var("x")
    elif var in ("y", "v") and n_dims == 1:
        v = Var(var, 1)
    else:
        m = _VAR_RE.match(str(var))
        if not m:
            raise ValueError(f"not a variable: {var!r}")
        v = Var(m.group(1), int(m.group(2)))
    if v.kind != "x" and not 1 <= v.index <= n_dims:
        raise ValueError(f"variable {v.name} out of range 1..{n_dims}")
    return v


def _depends(node: Node, var: Var) -> bool:
    if isinstance(node, Var):
        return node == var
    if isinstance(node, Unary):
        return _depends(node.arg, var)
    if isinstance(node, Binary):
        return _depends(node.left, var) or _depends(node.right, var)
    return False


ZERO, ONE, TWO = Const(0.0), Const(1.0), Const(2.0)


def _d(node: Node, var: Var) -> Node:
    if isinstance(node, (Const, Param)):
        return ZERO
    if isinstance(node, Var):
        return ONE if node == var else ZERO
    if isinstance(node, Unary):
        u, du = node.arg, _d(node.arg, var)
        op = node.op
        if op == "neg":
            return Unary("neg", du)
        if op == "sin":
            outer = Unary("cos", u)
        elif op == "cos":
            outer = Unary("neg", Unary("sin", u))
        elif op == "exp":
            outer = node
        elif op == "log":
            return Binary("/", du, u)
        elif op == "sqrt":
            return Binary("/", du, Binary("*", TWO, node))
        elif op == "abs":
            outer = Unary("sign", u)
        else:  # sign is piecewise constant
            return ZERO
        return Binary("*", outer, du)
    l, r = node.left, node.right
    dl, dr = _d(l, var), _d(r, var)
    op = node.op
    if op in ("+", "-"):
        return Binary(op, dl, dr)
    if op == "*":
        return Binary("+", Binary("*", dl, r), Binary("*", l, dr))
    if op == "/":
        return Binary(
            "/",
            Binary("-", Binary("*", dl, r), Binary("*", l, dr)),
            Binary("^", r, TWO),
        )
    if not _depends(r, var):
        return Binary("*", Binary("*", r, Binary("^", l, Binary("-", r, ONE))), dl)
    return Binary(
        "*",
        node,
        Binary("+", Binary("*", dr, Unary("log", l)), Binary("/", Binary("*", r, dl), l)),
    )


def diff(ast: ExprAst, var) -> ExprAst:
    """Exact partial derivative of ``ast`` with respect to ``var``, simplified.

    ``var`` is a name such as ``"x"``, ``"y2"`` or ``"v1"``.
    """
    v = _resolve_var(var, ast.n_dims)
    return simplify(ExprAst(_d(ast.root, v), ast.n_dims, ast.params))


# -- simplification ----------------------------------------------------------


def _fold_unary(op: str, c: float):
    try:
        with np.errstate(all="raise"):
            if op == "neg":
                return -c
            if op == "log" and c <= 0 or op == "sqrt" and c < 0 or op == "sign" and c == 0:
                return None
            val = float(getattr(np, op)(c))
    except (FloatingPointError, OverflowError):
        return None
    return val if math.isfinite(val) else None


def _fold_binary(op: str, a: float, b: float):
    try:
        if op == "+":
            val = a + b
        elif op == "-":
            val = a - b
        elif op == "*":
            val = a * b
        elif op == "/":
            if b == 0:
                return None
            val = a / b
        else:
            if a == 0 and b < 0:
                return None
            val = a**b
            if isinstance(val, complex):
                return None
    except (OverflowError, ZeroDivisionError):
        return None
    return val if math.isfinite(val) else None


def _is(node: Node, value: float) -> bool:
    return isinstance(node, Const) and node.value == value


def _simp(node: Node) -> Node:
    if isinstance(node, Unary):
        arg = _simp(node.arg)
        if isinstance(arg, Const):
            val = _fold_unary(node.op, arg.value)
            if val is not None:
                return Const(val)
        if node.op == "neg" and isinstance(arg, Unary) and arg.op == "neg":
            return arg.arg
        return Unary(node.op, arg)
    if not isinstance(node, Binary):
        return node
    l, r, op = _simp(node.left), _simp(node.right), node.op
    if isinstance(l, Const) and isinstance(r, Const):
        val = _fold_binary(op, l.value, r.value)
        if val is not None:
            return Const(val)
    if op == "+":
        if _is(l, 0):
            return r
        if _is(r, 0):
            return l
    elif op == "-":
        if _is(r, 0):
            return l
        if _is(l, 0):
            return _simp(Unary("neg", r))
    elif op == "*":
        if _is(l, 0) or _is(r, 0):
            return ZERO
        if _is(l, 1):
            return r
        if _is(r, 1):
            return l
    elif op == "/":
        if _is(r, 1):
            return l
        if _is(l, 0):
            return ZERO
    elif op == "^":
        if _is(r, 1):
            return l
        if _is(r, 0):
            return ONE
    return Binary(op, l, r)


def simplify(ast: ExprAst) -> ExprAst:
    """Constant folding plus the ``+0``, ``*1``, ``*0``, ``/1`` and ``^1`` identities."""
    return ExprAst(_simp(ast.root), ast.n_dims, ast.params)
