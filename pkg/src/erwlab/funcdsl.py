"""Small arithmetic expression language for memory functions.

Expressions are parsed into immutable ASTs over a scalar variable ``x`` or
components ``x1..xs``. Evaluation is numpy-vectorized and pure. Derivatives
at a point are obtained by central finite differences with Richardson
extrapolation (closed forms, when a model registers them, take precedence
at the call sites in :mod:`erwlab.theory`).

Grammar (see docs/grammar.md for the full EBNF)::

    expr    := term  (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := "-" unary | power
    power   := atom ("^" unary)?          # right associative
    atom    := NUMBER | VARIABLE | NAME "(" expr ("," expr)* ")"
             | "piecewise" "(" cond ":" expr (";" cond ":" expr)* ")"
             | "(" expr ")"
    cond    := expr ("<" | "<=" | ">" | ">=") expr
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

_FUNCTIONS_1 = ("abs", "sgn", "sqrt", "sin", "tanh", "exp", "log")
_FUNCTIONS_2 = ("min", "max")


class DslError(ValueError):
    """Base class for expression language failures."""


class ParseError(DslError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class EvalDomainError(DslError):
    """Evaluation hit log/sqrt of a negative, a zero divisor, or an
    uncovered piecewise region."""


# ---------------------------------------------------------------------------
# AST nodes


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 0-based component; arity-1 expressions use index 0
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str  # + - * / ^
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


@dataclass(frozen=True)
class Comparison:
    op: str  # < <= > >=
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Piecewise:
    branches: tuple  # of (Comparison, Node); first matching condition wins


Node = Union[Const, Var, BinOp, Neg, Call, Piecewise]


@dataclass(frozen=True)
class FuncExpr:
    """A parsed expression together with its declared arity."""

    ast: Node
    arity: int

    def __call__(self, x):
        return evaluate(self, x)

    def to_string(self) -> str:
        return print_ast(self.ast)

    @property
    def fast(self):
        """Compiled evaluator ``f(cols) -> array`` or None when the tree
        contains nodes needing runtime domain checks (log, sqrt, general
        division or powers). Simulation hot loops use it; the checked
        interpreter remains the reference semantics."""
        try:
            return object.__getattribute__(self, "_fast")
        except AttributeError:
            compiled = _compile(self)
            object.__setattr__(self, "_fast", compiled)
            return compiled


_COMPILED_CALLS = {
    "abs": "np.abs",
    "sgn": "np.sign",
    "sin": "np.sin",
    "tanh": "np.tanh",
    "exp": "np.exp",
    "min": "np.minimum",
    "max": "np.maximum",
}


def _emit(node):
    """Python source for nodes that cannot fail at runtime; None otherwise."""
    if isinstance(node, Const):
        return repr(node.value)
    if isinstance(node, Var):
        return f"cols[{node.index}]"
    if isinstance(node, Neg):
        inner = _emit(node.operand)
        return None if inner is None else f"(-{inner})"
    if isinstance(node, BinOp):
        left, right = _emit(node.left), _emit(node.right)
        if left is None or right is None:
            return None
        if node.op in ("+", "-", "*"):
            return f"({left} {node.op} {right})"
        if node.op == "/":
            if isinstance(node.right, Const) and node.right.value != 0:
                return f"({left} / {right})"
            return None
        if node.op == "^":
            if isinstance(node.right, Const) and float(node.right.value).is_integer():
                return f"({left} ** {int(node.right.value)})"
            return None
    if isinstance(node, Call) and node.name in _COMPILED_CALLS:
        args = [_emit(a) for a in node.args]
        if any(a is None for a in args):
            return None
        return f"{_COMPILED_CALLS[node.name]}({', '.join(args)})"
    if isinstance(node, Piecewise):
        conds, branches = [], []
        for cond, branch in node.branches:
            left, right = _emit(cond.left), _emit(cond.right)
            body = _emit(branch)
            if left is None or right is None or body is None:
                return None
            conds.append(f"({left} {cond.op} {right})")
            branches.append(f"({body} + zeros)")
        # np.select evaluates first-match-wins; uncovered points surface as
        # NaN and are rejected by the wrapper
        return (
            "np.select([" + ", ".join(conds) + "], [" + ", ".join(branches) + "], default=np.nan)"
        )
    return None


def _compile(expr):
    source = _emit(expr.ast)
    if source is None:
        return None
    has_piecewise = "np.select" in source
    namespace = {"np": np}
    fn = eval(f"lambda cols, zeros: ({source})", namespace)  # noqa: S307 - generated from our own AST

    def run(cols):
        zeros = np.zeros(np.broadcast(*cols).shape) if len(cols) > 1 else np.zeros(np.shape(cols[0]))
        out = fn(cols, zeros)
        if has_piecewise and np.any(np.isnan(out)):
            raise EvalDomainError("piecewise evaluated outside its covered region")
        return out

    return run


# ---------------------------------------------------------------------------
# Tokenizer

_SINGLE = set("+-*/^(),;:")


def _tokenize(text):
    tokens = []  # (kind, value, offset)
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            seen_e = False
            while j < n and (
                text[j].isdigit()
                or text[j] == "."
                or (text[j] in "eE" and not seen_e and j + 1 < n and (text[j + 1].isdigit() or text[j + 1] in "+-"))
                or (text[j] in "+-" and j > i and text[j - 1] in "eE")
            ):
                if text[j] in "eE":
                    seen_e = True
                j += 1
            try:
                value = float(text[i:j])
            except ValueError:
                raise ParseError(f"bad number literal {text[i:j]!r}", i)
            tokens.append(("num", value, i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("name", text[i:j], i))
            i = j
            continue
        if c in "<>":
            if i + 1 < n and text[i + 1] == "=":
                tokens.append(("cmp", c + "=", i))
                i += 2
            else:
                tokens.append(("cmp", c, i))
                i += 1
            continue
        if c in _SINGLE:
            tokens.append((c, c, i))
            i += 1
            continue
        raise ParseError(f"unexpected character {c!r}", i)
    tokens.append(("end", "", n))
    return tokens


# ---------------------------------------------------------------------------
# Parser (recursive descent, standard precedence)


class _Parser:
    def __init__(self, tokens, arity):
        self.tokens = tokens
        self.pos = 0
        self.arity = arity

    def peek(self):
        return self.tokens[self.pos]

    def next(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind):
        tok = self.next()
        if tok[0] != kind:
            raise ParseError(f"expected {kind!r}, found {tok[1]!r}", tok[2])
        return tok

    def parse_expr(self):
        node = self.parse_term()
        while self.peek()[0] in ("+", "-"):
            op = self.next()[0]
            node = BinOp(op, node, self.parse_term())
        return node

    def parse_term(self):
        node = self.parse_unary()
        while self.peek()[0] in ("*", "/"):
            op = self.next()[0]
            node = BinOp(op, node, self.parse_unary())
        return node

    def parse_unary(self):
        if self.peek()[0] == "-":
            self.next()
            return Neg(self.parse_unary())
        return self.parse_power()

    def parse_power(self):
        base = self.parse_atom()
        if self.peek()[0] == "^":
            self.next()
            # right associative; exponent binds tighter than unary minus
            return BinOp("^", base, self.parse_unary())
        return base

    def parse_atom(self):
        kind, value, offset = self.next()
        if kind == "num":
            return Const(value)
        if kind == "(":
            node = self.parse_expr()
            self.expect(")")
            return node
        if kind == "name":
            if value == "piecewise":
                return self.parse_piecewise(offset)
            if self.peek()[0] == "(":
                self.next()
                args = [self.parse_expr()]
                while self.peek()[0] == ",":
                    self.next()
                    args.append(self.parse_expr())
                self.expect(")")
                return self.make_call(value, args, offset)
            return self.make_var(value, offset)
        raise ParseError(f"unexpected token {value!r}", offset)

    def parse_piecewise(self, offset):
        self.expect("(")
        branches = []
        while True:
            cond = self.parse_condition()
            self.expect(":")
            branches.append((cond, self.parse_expr()))
            if self.peek()[0] == ";":
                self.next()
                continue
            break
        self.expect(")")
        return Piecewise(tuple(branches))

    def parse_condition(self):
        left = self.parse_expr()
        kind, value, offset = self.next()
        if kind != "cmp":
            raise ParseError("piecewise branch needs a comparison", offset)
        right = self.parse_expr()
        return Comparison(value, left, right)

    def make_call(self, name, args, offset):
        if name in _FUNCTIONS_1:
            if len(args) != 1:
                raise ParseError(f"{name} takes one argument", offset)
            return Call(name, tuple(args))
        if name in _FUNCTIONS_2:
            if len(args) != 2:
                raise ParseError(f"{name} takes two arguments", offset)
            return Call(name, tuple(args))
        raise ParseError(f"unknown function {name!r}", offset)

    def make_var(self, name, offset):
        if name == "x":
            if self.arity != 1:
                raise ParseError("variable 'x' requires arity 1; use x1..xs", offset)
            return Var(0, "x")
        if name.startswith("x") and name[1:].isdigit():
            idx = int(name[1:])
            if not 1 <= idx <= self.arity:
                raise ParseError(f"variable {name!r} exceeds declared arity {self.arity}", offset)
            return Var(idx - 1, name)
        raise ParseError(f"unknown identifier {name!r}", offset)


def parse(text: str, arity: int = 1) -> FuncExpr:
    """Parse ``text`` into a :class:`FuncExpr` with ``arity`` variables."""
    if not isinstance(arity, int) or arity < 1:
        raise DslError("arity must be a positive integer")
    if not text or not text.strip():
        raise ParseError("empty expression", 0)
    parser = _Parser(_tokenize(text), arity)
    node = parser.parse_expr()
    tok = parser.peek()
    if tok[0] != "end":
        raise ParseError(f"trailing input {tok[1]!r}", tok[2])
    return FuncExpr(node, arity)


# ---------------------------------------------------------------------------
# Evaluation (numpy-vectorized, pure)


def _eval(node, cols):
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        return cols[node.index]
    if isinstance(node, Neg):
        return -_eval(node.operand, cols)
    if isinstance(node, BinOp):
        a = _eval(node.left, cols)
        b = _eval(node.right, cols)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            if np.any(b == 0):
                raise EvalDomainError("division by zero")
            return a / b
        if node.op == "^":
            if isinstance(node.right, Const) and float(node.right.value).is_integer():
                return a ** int(node.right.value)
            if np.any(np.asarray(a) < 0):
                raise EvalDomainError("negative base with non-integer exponent")
            return a ** b
    if isinstance(node, Call):
        args = [_eval(arg, cols) for arg in node.args]
        if node.name == "abs":
            return np.abs(args[0])
        if node.name == "sgn":
            return np.sign(args[0])
        if node.name == "sqrt":
            if np.any(np.asarray(args[0]) < 0):
                raise EvalDomainError("sqrt of negative value")
            return np.sqrt(args[0])
        if node.name == "sin":
            return np.sin(args[0])
        if node.name == "tanh":
            return np.tanh(args[0])
        if node.name == "exp":
            return np.exp(args[0])
        if node.name == "log":
            if np.any(np.asarray(args[0]) <= 0):
                raise EvalDomainError("log of non-positive value")
            return np.log(args[0])
        if node.name == "min":
            return np.minimum(args[0], args[1])
        if node.name == "max":
            return np.maximum(args[0], args[1])
    if isinstance(node, Piecewise):
        return _eval_piecewise(node, cols)
    raise DslError(f"cannot evaluate node {node!r}")


def _eval_comparison(cmp, cols):
    a = _eval(cmp.left, cols)
    b = _eval(cmp.right, cols)
    if cmp.op == "<":
        return np.less(a, b)
    if cmp.op == "<=":
        return np.less_equal(a, b)
    if cmp.op == ">":
        return np.greater(a, b)
    return np.greater_equal(a, b)


def _eval_piecewise(node, cols):
    shape = np.broadcast(*cols).shape if len(cols) > 1 else np.shape(cols[0])
    out = np.zeros(shape, dtype=float)
    remaining = np.ones(shape, dtype=bool)
    for cond, branch in node.branches:
        mask = np.broadcast_to(_eval_comparison(cond, cols), shape) & remaining
        if np.any(mask):
            value = np.broadcast_to(np.asarray(_eval(branch, cols), dtype=float), shape)
            out = np.where(mask, value, out)
            remaining = remaining & ~mask
    if np.any(remaining):
        raise EvalDomainError("piecewise evaluated outside its covered region")
    if out.shape == ():
        return float(out)
    return out


def evaluate(expr: FuncExpr, x):
    """Evaluate ``expr`` at point(s) ``x``.

    For arity 1, ``x`` is a scalar or any array (evaluated elementwise).
    For arity s > 1, ``x`` is an s-vector or an array whose last axis has
    length s.
    """
    if expr.arity == 1:
        arr = np.asarray(x, dtype=float)
        cols = [arr]
        scalar = arr.ndim == 0
    else:
        arr = np.asarray(x, dtype=float)
        if arr.shape[-1] != expr.arity:
            raise DslError(f"expected last axis of length {expr.arity}, got shape {arr.shape}")
        cols = [arr[..., j] for j in range(expr.arity)]
        scalar = arr.ndim == 1
    out = _eval(expr.ast, cols)
    if scalar:
        return float(out)
    return np.asarray(out, dtype=float)


# ---------------------------------------------------------------------------
# Printer (parse . print . parse is the identity on ASTs)

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def print_ast(node, parent_prec=0) -> str:
    if isinstance(node, Const):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        inner = print_ast(node.operand, _PREC["neg"])
        text = f"-{inner}"
        return f"({text})" if parent_prec > _PREC["neg"] else text
    if isinstance(node, BinOp):
        prec = _PREC[node.op]
        # left operand of ^ needs parens at equal precedence (right assoc);
        # right operands of - and / need them too (left assoc)
        left = print_ast(node.left, prec + (1 if node.op == "^" else 0))
        right = print_ast(node.right, prec + (1 if node.op in ("-", "/") else 0))
        text = f"{left} {node.op} {right}"
        return f"({text})" if prec < parent_prec or (prec == parent_prec) else text
    if isinstance(node, Call):
        args = ", ".join(print_ast(a) for a in node.args)
        return f"{node.name}({args})"
    if isinstance(node, Piecewise):
        parts = []
        for cond, branch in node.branches:
            parts.append(f"{print_ast(cond.left)} {cond.op} {print_ast(cond.right)} : {print_ast(branch)}")
        return "piecewise(" + " ; ".join(parts) + ")"
    raise DslError(f"cannot print node {node!r}")


# ---------------------------------------------------------------------------
# AST builders used by the model layer


def const(value) -> Node:
    # negative literals are stored as Neg(Const(...)) so printed text reparses
    # to the identical tree
    v = float(value)
    if v < 0:
        return Neg(Const(-v))
    return Const(v)


def affine(expr: FuncExpr, scale: float, shift: float) -> FuncExpr:
    """Return ``scale * expr + shift`` as a new expression."""
    return FuncExpr(BinOp("+", BinOp("*", const(scale), expr.ast), const(shift)), expr.arity)


def substitute(expr: FuncExpr, replacement: Node) -> FuncExpr:
    """Replace every variable occurrence by ``replacement`` (arity-1 only)."""
    if expr.arity != 1:
        raise DslError("substitute supports arity-1 expressions only")

    def walk(node):
        if isinstance(node, Var):
            return replacement
        if isinstance(node, Const):
            return node
        if isinstance(node, Neg):
            return Neg(walk(node.operand))
        if isinstance(node, BinOp):
            return BinOp(node.op, walk(node.left), walk(node.right))
        if isinstance(node, Call):
            return Call(node.name, tuple(walk(a) for a in node.args))
        if isinstance(node, Comparison):
            return Comparison(node.op, walk(node.left), walk(node.right))
        if isinstance(node, Piecewise):
            return Piecewise(tuple((walk(c), walk(b)) for c, b in node.branches))
        raise DslError(f"cannot substitute into {node!r}")

    return FuncExpr(walk(expr.ast), 1)


def one_minus(expr: FuncExpr) -> FuncExpr:
    return FuncExpr(BinOp("-", Const(1.0), expr.ast), expr.arity)


# ---------------------------------------------------------------------------
# Numerical differentiation

# central difference stencils of O(h^2); offsets are in units of h
_STENCILS = {
    1: ((-1, -0.5), (1, 0.5)),
    2: ((-1, 1.0), (0, -2.0), (1, 1.0)),
    3: ((-2, -0.5), (-1, 1.0), (1, -1.0), (2, 0.5)),
    4: ((-2, 1.0), (-1, -4.0), (0, 6.0), (1, -4.0), (2, 1.0)),
    5: ((-3, -0.5), (-2, 2.0), (-1, -2.5), (1, 2.5), (2, -2.0), (3, 0.5)),
    6: ((-3, 1.0), (-2, -6.0), (-1, 15.0), (0, -20.0), (1, 15.0), (2, -6.0), (3, 1.0)),
}

MAX_DERIV_ORDER = 6


class NonSmoothError(DslError):
    """Raised when Richardson extrapolants diverge at the requested point."""


def derive_at(expr: FuncExpr, x0, order: int = 1, axis: int = 0,
              base_step: float = 1e-2, levels: int = 7):
    """Derivative of ``expr`` of the given order at ``x0``.

    For arity > 1 the derivative is the partial along ``axis``. Uses central
    differences at steps ``base_step * 2**-k``, k = 0..levels-1, combined by
    Richardson extrapolation; the returned pair is ``(value, error_estimate)``.
    Raises :class:`NonSmoothError` if successive extrapolants diverge, which
    signals a kink or jump within the sampled neighbourhood.
    """
    if not 1 <= order <= MAX_DERIV_ORDER:
        raise DslError(f"derivative order must be in 1..{MAX_DERIV_ORDER}")
    stencil = _STENCILS[order]
    x0 = np.asarray(x0, dtype=float)

    def estimate(h):
        total = 0.0
        for offset, coeff in stencil:
            point = x0.copy() if x0.ndim else np.array(x0)
            if expr.arity == 1:
                point = float(x0) + offset * h
            else:
                point = x0.copy()
                point[axis] += offset * h
            total += coeff * evaluate(expr, point)
        return total / h ** order

    # Richardson/Neville table with error tracking (Ridders' scheme): the
    # ladder eliminates successive powers of h (not only even ones, so
    # expressions with jumps in higher derivatives still converge); keep the
    # entry whose neighbouring extrapolants agree best.
    table = [[estimate(base_step)]]
    best = table[0][0]
    best_err = math.inf
    for k in range(1, levels):
        h = base_step * 2.0 ** (-k)
        row = [estimate(h)]
        for j in range(1, k + 1):
            factor = 2.0 ** j
            row.append((factor * row[j - 1] - table[k - 1][j - 1]) / (factor - 1.0))
        table.append(row)
        err = max(abs(row[-1] - row[-2]), abs(row[-1] - table[k - 1][-1]))
        if err <= best_err:
            best, best_err = row[-1], err
    if not math.isfinite(best) or best_err > 0.25 * max(1e-8, abs(best)):
        raise NonSmoothError(
            f"derivative estimates do not converge at {x0!r} (order {order}); "
            "the expression may be non-smooth there"
        )
    return best, best_err
