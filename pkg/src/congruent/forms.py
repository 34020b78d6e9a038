"""One-forms and two-forms with symbolic coefficients over named coordinates."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import sympy as sp

from .expr import evaluate_batch, simplify, to_text


class UnboundCoordinateError(KeyError):
    pass


def _canon(coeffs: Mapping[str, object], canonical: bool) -> dict[str, sp.Expr]:
    out = {}
    for name, c in coeffs.items():
        c = simplify(c) if canonical else sp.sympify(c)
        if c != 0:
            out[str(name)] = c
    return out


@dataclass(frozen=True, eq=False)
class OneForm:
    """``sum_c f_c dc`` with zero coefficients dropped."""

    coeffs: Mapping[str, sp.Expr] = field(default_factory=dict)
    space: str = ""

    @classmethod
    def build(cls, coeffs: Mapping[str, object], space: str = "", *, canonical: bool = True):
        return cls(_canon(coeffs, canonical), space)

    def __getitem__(self, name: str) -> sp.Expr:
        return self.coeffs.get(name, sp.S.Zero)

    def __iter__(self):
        return iter(self.coeffs.items())

    def __eq__(self, other) -> bool:
        if not isinstance(other, OneForm):
            return NotImplemented
        return dict(self.coeffs) == dict(other.coeffs)

    def __hash__(self):
        return hash(frozenset(self.coeffs.items()))

    def __add__(self, other: "OneForm") -> "OneForm":
        names = list(self.coeffs) + [n for n in other.coeffs if n not in self.coeffs]
        return OneForm.build({n: self[n] + other[n] for n in names}, self.space)

    def __neg__(self) -> "OneForm":
        return OneForm({n: -c for n, c in self.coeffs.items()}, self.space)

    def __sub__(self, other: "OneForm") -> "OneForm":
        return self + (-other)

    def scale(self, f) -> "OneForm":
        return OneForm.build({n: f * c for n, c in self.coeffs.items()}, self.space)

    @property
    def is_zero(self) -> bool:
        return not self.coeffs

    def vector(self, coords: Sequence[str]) -> list[sp.Expr]:
        extra = set(self.coeffs) - set(coords)
        if extra:
            raise UnboundCoordinateError(f"form has differentials outside the coordinate list: {sorted(extra)}")
        return [self[c] for c in coords]

    def to_text(self) -> str:
        if not self.coeffs:
            return "0"
        return " + ".join(f"({to_text(c)})*d{n}" for n, c in self.coeffs.items())

    def to_dict(self) -> dict[str, str]:
        return {n: to_text(c) for n, c in self.coeffs.items()}

    def __repr__(self) -> str:
        return f"OneForm({self.to_text()})"


@dataclass(frozen=True, eq=False)
class TwoForm:
    """``sum_{a<b} f_ab da^db`` keyed by name-sorted coordinate pairs."""

    coeffs: Mapping[tuple[str, str], sp.Expr] = field(default_factory=dict)

    @classmethod
    def build(cls, pairs: Iterable[tuple[str, str, object]], *, canonical: bool = True):
        acc: dict[tuple[str, str], sp.Expr] = {}
        for a, b, c in pairs:
            if a == b:
                continue
            key, sign = ((a, b), 1) if a < b else ((b, a), -1)
            acc[key] = acc.get(key, sp.S.Zero) + sign * sp.sympify(c)
        out = {}
        for key in sorted(acc):
            c = simplify(acc[key]) if canonical else acc[key]
            if c != 0:
                out[key] = c
        return cls(out)

    def __getitem__(self, pair: tuple[str, str]) -> sp.Expr:
        a, b = pair
        if a < b:
            return self.coeffs.get((a, b), sp.S.Zero)
        return -self.coeffs.get((b, a), sp.S.Zero)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TwoForm):
            return NotImplemented
        return dict(self.coeffs) == dict(other.coeffs)

    @property
    def is_zero(self) -> bool:
        return not self.coeffs

    def to_text(self) -> str:
        if not self.coeffs:
            return "0"
        return " + ".join(f"({to_text(c)})*d{a}^d{b}" for (a, b), c in self.coeffs.items())

    def __repr__(self) -> str:
        return f"TwoForm({self.to_text()})"


def differential(f, coords: Sequence[str] | None = None, space: str = "") -> OneForm:
    """Exterior derivative of a function; symbols outside ``coords`` are constants."""
    f = sp.sympify(f)
    if coords is None:
        coords = sorted(s.name for s in f.free_symbols)
    return OneForm.build({c: sp.diff(f, sp.Symbol(c)) for c in coords}, space)


def exterior_derivative(w: OneForm, coords: Sequence[str] | None = None, *,
                        canonical: bool = True) -> TwoForm:
    """``d(sum_j f_j dx^j) = sum_{i,j} (df_j/dx^i) dx^i ^ dx^j``.

    Coefficients are differentiated only along ``coords`` (default: every
    free symbol of the coefficients plus the form's own differentials).
    """
    if coords is None:
        names = set(w.coeffs)
        for c in w.coeffs.values():
            names |= {s.name for s in c.free_symbols}
        coords = sorted(names)
    pairs = []
    for j, f in w.coeffs.items():
        for i in coords:
            df = sp.diff(f, sp.Symbol(i))
            if df != 0:
                pairs.append((i, j, df))
    return TwoForm.build(pairs, canonical=canonical)


def wedge(a: OneForm, b: OneForm, *, canonical: bool = True) -> TwoForm:
    pairs = [(i, j, fa * fb) for i, fa in a.coeffs.items() for j, fb in b.coeffs.items()]
    return TwoForm.build(pairs, canonical=canonical)


def pullback_form(w: OneForm, mapping: Mapping[str, object], source: Sequence[str],
                  space: str = "", *, canonical: bool = True) -> OneForm:
    """Pull ``w`` back along a map given coordinate-wise on the source.

    ``mapping`` sends each target coordinate to an expression in the
    ``source`` coordinates; every differential carried by ``w`` must be
    covered.
    """
    mapping = {str(k): sp.sympify(v) for k, v in mapping.items()}
    missing = [c for c in w.coeffs if c not in mapping]
    if missing:
        raise UnboundCoordinateError(f"map does not cover coordinate(s) {missing}")
    subs = {sp.Symbol(k): v for k, v in mapping.items()}
    acc: dict[str, sp.Expr] = {s: sp.S.Zero for s in source}
    for c, f in w.coeffs.items():
        fc = f.xreplace(subs)
        image = mapping[c]
        for s in source:
            d = sp.diff(image, sp.Symbol(s))
            if d != 0:
                acc[s] += fc * d
    return OneForm.build(acc, space, canonical=canonical)


def coefficient_matrix(forms: Sequence[OneForm], coords: Sequence[str]) -> sp.Matrix:
    return sp.Matrix([f.vector(coords) for f in forms])


def numeric_coefficients(forms: Sequence[OneForm], coords: Sequence[str],
                         points: np.ndarray, names: Sequence[str] | None = None) -> np.ndarray:
    """Coefficient matrices at each point: shape ``(m, len(forms), len(coords))``."""
    names = list(coords) if names is None else list(names)
    flat = [f[c] for f in forms for c in coords]
    vals = evaluate_batch(flat, names, points)
    return vals.reshape(len(points), len(forms), len(coords))
