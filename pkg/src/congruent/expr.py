"""Symbolic expression core.

Expressions are plain sympy trees built over named symbols without
assumptions.  This module adds what the rest of the package needs on top:
an infix parser with precise error locations, a printer that round-trips
through the parser, a canonical ``simplify``, guarded numeric evaluation,
and probabilistic equality testing.
"""

from __future__ import annotations

import cmath
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import sympy as sp
from sympy.printing.str import StrPrinter

Expr = sp.Expr

KINDS = ("base", "fiber", "jet", "group-param", "auxiliary")

FUNCTIONS = {
    "sin": sp.sin,
    "cos": sp.cos,
    "tan": sp.tan,
    "atan": sp.atan,
    "atan2": sp.atan2,
    "sqrt": sp.sqrt,
    "exp": sp.exp,
    "ln": sp.log,
}

DEFAULT_BOX = (-2.0, 2.0)
DEFAULT_EPS = 1e-12


class ExprError(Exception):
    """Base class for expression errors."""


class ParseError(ExprError):
    def __init__(self, message: str, offset: int, text: str = ""):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset
        self.text = text


class UnknownIdentifierError(ParseError):
    def __init__(self, name: str, offset: int, text: str = ""):
        ExprError.__init__(self, f"unknown identifier {name!r} at byte offset {offset}")
        self.name = name
        self.offset = offset
        self.text = text


class UnboundVariableError(ExprError):
    def __init__(self, names):
        self.names = sorted(names)
        super().__init__("unbound variable(s): " + ", ".join(self.names))


class DomainError(ExprError):
    def __init__(self, reason: str, subexpr):
        self.reason = reason
        self.subexpr = subexpr
        super().__init__(f"{reason} in subexpression {to_text(subexpr)}")


class SamplingExhaustedError(ExprError):
    pass


@dataclass
class VarTable:
    """Ordered registry of variable names, each tagged with a kind."""

    names: list[str] = field(default_factory=list)
    kinds: dict[str, str] = field(default_factory=dict)

    def add(self, name: str, kind: str) -> sp.Symbol:
        if kind not in KINDS:
            raise ValueError(f"unknown variable kind {kind!r}")
        if name in FUNCTIONS:
            raise ValueError(f"{name!r} is a reserved function name")
        if not re.fullmatch(r"[A-Za-z][A-Za-z0-9_]*", name):
            raise ValueError(f"invalid variable name {name!r}")
        if name in self.kinds:
            if self.kinds[name] != kind:
                raise ValueError(f"variable {name!r} already registered as {self.kinds[name]}")
            return sp.Symbol(name)
        self.names.append(name)
        self.kinds[name] = kind
        return sp.Symbol(name)

    def extend(self, names: Iterable[str], kind: str) -> list[sp.Symbol]:
        return [self.add(n, kind) for n in names]

    def __contains__(self, name) -> bool:
        return str(name) in self.kinds

    def __len__(self) -> int:
        return len(self.names)

    def symbol(self, name: str) -> sp.Symbol:
        if name not in self.kinds:
            raise KeyError(name)
        return sp.Symbol(name)

    def of_kind(self, *kinds: str) -> list[str]:
        return [n for n in self.names if self.kinds[n] in kinds]

    def copy(self) -> "VarTable":
        return VarTable(list(self.names), dict(self.kinds))


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d*)?|\.\d+)|(?P<name>[A-Za-z][A-Za-z0-9_]*)"
    r"|(?P<op>\*\*|[-+*/^(),]))"
)


def _tokenize(text: str):
    tokens = []
    pos = 0
    raw = text.encode()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            if text[pos:].strip() == "":
                break
            bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ParseError(f"unexpected character {text[bad]!r}",
                             len(text[:bad].encode()), text)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), len(text[:start].encode())))
        pos = m.end()
    tokens.append(("end", "", len(raw)))
    return tokens


class _Parser:
    def __init__(self, text: str, vars: VarTable | None):
        self.text = text
        self.vars = vars
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, off = self.take()
        if val != value or kind != "op":
            found = "end of input" if kind == "end" else repr(val)
            raise ParseError(f"expected {value!r}, found {found}", off, self.text)

    def parse(self):
        e = self.sum()
        kind, val, off = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {val!r}", off, self.text)
        return e

    def sum(self):
        e = self.product()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-" and val:
                self.take()
                rhs = self.product()
                e = e + rhs if val == "+" else e - rhs
            else:
                return e

    def product(self):
        e = self.unary()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in ("*", "/"):
                off = self.take()[2]
                rhs = self.unary()
                if val == "/" and rhs == 0:
                    raise ParseError("division by zero", off, self.text)
                e = e * rhs if val == "*" else e / rhs
            else:
                return e

    def unary(self):
        kind, val, _ = self.peek()
        if kind == "op" and val in ("-", "+"):
            self.take()
            e = self.unary()
            return -e if val == "-" else e
        return self.power()

    def power(self):
        base = self.atom()
        kind, val, _ = self.peek()
        if kind == "op" and val in ("^", "**"):
            self.take()
            # right-associative; exponent may carry a sign
            return base ** self.unary()
        return base

    def atom(self):
        kind, val, off = self.take()
        if kind == "num":
            return sp.Rational(val)
        if kind == "name":
            nk, nv, _ = self.peek()
            if val in FUNCTIONS:
                if not (nk == "op" and nv == "("):
                    raise ParseError(f"function {val!r} requires arguments", off, self.text)
                self.take()
                args = [self.sum()]
                while self.peek()[1] == "," and self.peek()[0] == "op":
                    self.take()
                    args.append(self.sum())
                self.expect(")")
                want = 2 if val == "atan2" else 1
                if len(args) != want:
                    raise ParseError(f"{val} takes {want} argument(s), got {len(args)}",
                                     off, self.text)
                return FUNCTIONS[val](*args)
            if self.vars is not None and val not in self.vars:
                raise UnknownIdentifierError(val, off, self.text)
            return sp.Symbol(val)
        if kind == "op" and val == "(":
            e = self.sum()
            self.expect(")")
            return e
        found = "end of input" if kind == "end" else repr(val)
        raise ParseError(f"unexpected {found}", off, self.text)


def parse(text: str, vars: VarTable | None = None, *, canonical: bool = True) -> Expr:
    """Parse infix ``text`` into an expression.

    ``^`` (or ``**``) is right-associative power; numeric literals become
    exact rationals.  When ``vars`` is given every identifier must be
    registered there.  The result is passed through :func:`simplify` unless
    ``canonical`` is false.
    """
    if not isinstance(text, str):
        raise TypeError(f"expected a string, got {type(text).__name__}")
    e = _Parser(text, vars).parse()
    return simplify(e) if canonical else e


# ---------------------------------------------------------------------------
# printing

class _Printer(StrPrinter):
    def _print_Pow(self, expr, rational=False):
        b, e = expr.base, expr.exp
        if e == sp.S.Half:
            return f"sqrt({self._print(b)})"
        if e == -sp.S.Half:
            return f"1/sqrt({self._print(b)})"
        if e.is_Integer and e < 0:
            inner = b ** (-e)
            return "1/" + self.parenthesize(inner, 50)
        base = self._print(b) if (b.is_Symbol or (b.is_Integer and b >= 0)) else f"({self._print(b)})"
        if (e.is_Integer and e >= 0) or e.is_Symbol:
            return f"{base}^{self._print(e)}"
        return f"{base}^({self._print(e)})"

    def _print_log(self, expr):
        return f"ln({self._print(expr.args[0])})"

    def _print_Exp1(self, expr):
        return "exp(1)"

    def _print_ImaginaryUnit(self, expr):
        return "sqrt(-1)"

    def _print_Pi(self, expr):
        # sympy folds atan(1) to pi/4; keep the text parseable
        return "(4*atan(1))"

    def _print_Float(self, expr):
        return str(sp.Rational(expr))


_printer = _Printer({"order": "lex"})


def to_text(e) -> str:
    """Print ``e`` in the same syntax :func:`parse` accepts."""
    return _printer.doprint(sp.sympify(e))


# ---------------------------------------------------------------------------
# algebra

def diff(e: Expr, v) -> Expr:
    v = sp.Symbol(v) if isinstance(v, str) else v
    return simplify(sp.diff(e, v))


def substitute(e: Expr, bindings: Mapping, *, canonical: bool = True) -> Expr:
    """Simultaneous substitution of ``bindings`` (variable -> Expr) into ``e``."""
    subs = {(sp.Symbol(k) if isinstance(k, str) else k): sp.sympify(v)
            for k, v in bindings.items()}
    out = sp.sympify(e).xreplace(subs) if subs else sp.sympify(e)
    return simplify(out) if canonical else out


def _pythagorean(e: Expr) -> Expr:
    sins = {f.args[0] for f in e.atoms(sp.sin)}
    coss = {f.args[0] for f in e.atoms(sp.cos)}
    common = sins & coss
    if not common:
        return e
    e = sp.expand(e)
    for a in sorted(common, key=sp.default_sort_key):
        e = e.subs(sp.sin(a) ** 2, 1 - sp.cos(a) ** 2)
    return sp.expand(e)


def simplify(e) -> Expr:
    """Canonical form.

    The result is a single fraction with expanded, collected numerator and
    denominator (sympy ``cancel`` over all generators, including radicals
    and function applications), with ``sin(t)^2 + cos(t)^2`` folded to 1.
    """
    e = sp.sympify(e)
    if e.is_Atom:
        return e
    if e.has(sp.sin) and e.has(sp.cos):
        num, den = sp.fraction(sp.together(e))
        e = _pythagorean(num) / _pythagorean(den)
    out = sp.cancel(sp.together(e))
    if out.has(sp.zoo, sp.nan):
        raise DomainError("division by zero", e)
    return out


def tidy(e, max_ops: int = 300) -> Expr:
    """:func:`simplify` for expressions of at most ``max_ops`` operations.

    Larger ones are returned unchanged; canonicalising them costs far more
    than the numeric work that follows.
    """
    e = sp.sympify(e)
    if sp.count_ops(e) > max_ops:
        return e
    return simplify(e)


def free_names(e) -> set[str]:
    return {s.name for s in sp.sympify(e).free_symbols}


def is_constant(e) -> bool:
    return not sp.sympify(e).free_symbols


# ---------------------------------------------------------------------------
# numeric evaluation

def evaluate(e, point: Mapping, *, eps: float = DEFAULT_EPS, complex_mode: bool = False):
    """Evaluate ``e`` at ``point`` (variable -> number) in double precision.

    Raises :class:`UnboundVariableError` if a variable has no value and
    :class:`DomainError` naming the offending subexpression for a square
    root or fractional power of a negative number (real mode), a logarithm
    of a non-positive number (real mode), or a division by a value of
    magnitude below ``eps``.
    """
    e = sp.sympify(e)
    vals = {str(k): v for k, v in point.items()}
    missing = free_names(e) - set(vals)
    if missing:
        raise UnboundVariableError(missing)
    lib = cmath if complex_mode else math
    num = complex if complex_mode else float

    def rec(node):
        if node.is_Symbol:
            return num(vals[node.name])
        if node is sp.zoo or node is sp.nan:
            raise DomainError("undefined value", node)
        if node.is_Number:
            return num(node)
        if node is sp.E:
            return num(math.e)
        if node is sp.pi:
            return num(math.pi)
        if node.is_Add:
            return sum((rec(a) for a in node.args), num(0))
        if node.is_Mul:
            out = num(1)
            for a in node.args:
                out *= rec(a)
            return out
        if node.is_Pow:
            b = rec(node.base)
            x = node.exp
            if x.is_Integer:
                if x < 0 and abs(b) < eps:
                    raise DomainError("division by a value near zero", node.base)
                return b ** int(x)
            if x.is_Rational:
                if abs(b) < eps and x < 0:
                    raise DomainError("division by a value near zero", node.base)
                if not complex_mode and b < 0:
                    raise DomainError("fractional power of a negative number", node)
                if x == sp.S.Half:
                    return lib.sqrt(b)
                if x == -sp.S.Half:
                    return 1 / lib.sqrt(b)
                return b ** float(x) if not complex_mode else cmath.exp(float(x) * cmath.log(b))
            xv = rec(x)
            if not complex_mode and b < 0:
                raise DomainError("real power of a negative number", node)
            if abs(b) < eps and (xv.real if complex_mode else xv) < 0:
                raise DomainError("division by a value near zero", node.base)
            return b ** xv
        if isinstance(node, sp.sin):
            return lib.sin(rec(node.args[0]))
        if isinstance(node, sp.cos):
            return lib.cos(rec(node.args[0]))
        if isinstance(node, sp.tan):
            a = rec(node.args[0])
            c = lib.cos(a)
            if abs(c) < eps:
                raise DomainError("tangent at a pole", node)
            return lib.tan(a)
        if isinstance(node, sp.atan):
            return lib.atan(rec(node.args[0]))
        if isinstance(node, sp.atan2):
            y, x_ = rec(node.args[0]), rec(node.args[1])
            if complex_mode:
                if abs(y.imag) > 0 or abs(x_.imag) > 0:
                    raise DomainError("atan2 of complex arguments", node)
                y, x_ = y.real, x_.real
            if abs(y) < eps and abs(x_) < eps:
                raise DomainError("atan2 at the origin", node)
            return num(math.atan2(y, x_))
        if isinstance(node, sp.exp):
            return lib.exp(rec(node.args[0]))
        if isinstance(node, sp.log):
            a = rec(node.args[0])
            if abs(a) < eps or (not complex_mode and a < 0):
                raise DomainError("logarithm of a non-positive number", node)
            return lib.log(a)
        if isinstance(node, sp.Abs):
            return num(abs(rec(node.args[0])))
        raise ExprError(f"cannot evaluate node {node!r}")

    return rec(e)


_NUMPY_MODULES = [{"atan2": np.arctan2, "log": np.log, "ln": np.log}, "numpy"]


def lambdify(exprs: Sequence, names: Sequence[str]):
    """Vectorised evaluator ``f(*columns) -> list`` for a batch of expressions.

    Invalid inputs (domain violations) yield non-finite entries instead of
    raising; use :func:`evaluate` when the offending subexpression matters.
    """
    syms = [sp.Symbol(n) for n in names]
    exprs = [sp.sympify(e) for e in exprs]
    f = sp.lambdify(syms, exprs, modules=_NUMPY_MODULES, cse=True)

    def call(*cols):
        with np.errstate(all="ignore"):
            out = f(*cols)
        return out

    return call


def batch_evaluator(exprs: Sequence, names: Sequence[str]):
    """Compile ``exprs`` once; the result maps an ``(m, len(names))`` array to ``(m, len(exprs))``."""
    exprs = list(exprs)
    f = lambdify(exprs, names) if exprs else None

    def run(points: np.ndarray) -> np.ndarray:
        points = np.asarray(points)
        m = points.shape[0]
        dtype = complex if np.iscomplexobj(points) else float
        res = np.empty((m, len(exprs)), dtype=dtype)
        if f is None:
            return res
        out = f(*[points[:, j] for j in range(points.shape[1])])
        for j, o in enumerate(out):
            o = np.asarray(o)
            if dtype is float and np.iscomplexobj(o):
                o = np.where(o.imag != 0, np.nan, o.real)
            res[:, j] = o
        return res

    return run


def evaluate_batch(exprs: Sequence, names: Sequence[str], points: np.ndarray) -> np.ndarray:
    """Evaluate ``exprs`` on an ``(m, len(names))`` array; returns ``(m, len(exprs))``."""
    return batch_evaluator(exprs, names)(points)


def sample_points(names: Sequence[str], n: int, rng: np.random.Generator, *,
                  box=DEFAULT_BOX, complex_mode: bool = False) -> np.ndarray:
    """Uniform random points in ``box`` (a pair, or a mapping name -> pair)."""
    lo = np.empty(len(names))
    hi = np.empty(len(names))
    for j, name in enumerate(names):
        b = box.get(name, DEFAULT_BOX) if isinstance(box, Mapping) else box
        lo[j], hi[j] = b
    pts = rng.uniform(lo, hi, size=(n, len(names)))
    if complex_mode:
        pts = pts + 1j * rng.uniform(lo, hi, size=(n, len(names)))
    return pts


def probably_equal(e1, e2, trials: int = 20, tol: float = 1e-9, *, seed: int = 0,
                   box=DEFAULT_BOX, complex_mode: bool = False,
                   names: Sequence[str] | None = None) -> bool:
    """Randomised equality test.

    True iff ``|e1 - e2| <= tol * (1 + max(|e1|, |e2|))`` at ``trials``
    random points of ``box``.  Points where either side is undefined are
    skipped; at most ``10 * trials`` points are drawn.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    e1, e2 = sp.sympify(e1), sp.sympify(e2)
    if e1 == e2:
        return True
    if names is None:
        names = sorted(free_names(e1) | free_names(e2))
    if not names:
        v1, v2 = complex(e1.evalf()), complex(e2.evalf())
        return abs(v1 - v2) <= tol * (1 + max(abs(v1), abs(v2)))
    rng = np.random.default_rng(seed)
    pts = sample_points(names, 10 * trials, rng, box=box, complex_mode=complex_mode)
    vals = evaluate_batch([e1, e2], names, pts)
    vals = vals[np.all(np.isfinite(vals), axis=1)][:trials]
    if len(vals) < trials:
        raise SamplingExhaustedError(
            f"only {len(vals)} of {trials} sample points were in the domain")
    a, b = vals[:, 0], vals[:, 1]
    scale = 1 + np.maximum(np.abs(a), np.abs(b))
    return bool(np.all(np.abs(a - b) <= tol * scale))
