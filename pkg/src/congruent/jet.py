"""Jet bundle coordinates, total derivatives and prolonged group actions."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property, lru_cache
from math import comb
from typing import TYPE_CHECKING, Mapping

import numpy as np
import sympy as sp

from .expr import VarTable, lambdify, simplify

if TYPE_CHECKING:
    from .group import ActionSpec


class OrderOverflowError(ValueError):
    """A total derivative would leave the jet space."""


@dataclass(frozen=True)
class MultiIndex:
    """Symmetric multi-index over base directions, stored sorted."""

    indices: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(sorted(self.indices)))

    @property
    def order(self) -> int:
        return len(self.indices)

    def extend(self, i: int) -> "MultiIndex":
        return MultiIndex(self.indices + (i,))


@dataclass(frozen=True)
class JetSpace:
    """Coordinates of ``J^k(X, M)``.

    Jet coordinate ``u^alpha_J`` is named ``<fiber>_<base names of J>``,
    e.g. ``u_xy``; order-zero fiber coordinates keep their bare names.
    """

    base: tuple[str, ...]
    fiber: tuple[str, ...]
    order: int

    def __post_init__(self):
        object.__setattr__(self, "base", tuple(self.base))
        object.__setattr__(self, "fiber", tuple(self.fiber))
        if self.order < 0:
            raise ValueError("jet order must be non-negative")
        if not self.base:
            raise ValueError("at least one base coordinate is required")
        for name in self.fiber:
            if "_" in name:
                raise ValueError(f"fiber name {name!r} may not contain '_'")
        names = list(self.base) + list(self.fiber)
        if len(set(names)) != len(names):
            raise ValueError("base and fiber names must be distinct")

    @property
    def p(self) -> int:
        return len(self.base)

    @property
    def n(self) -> int:
        return len(self.fiber)

    def name(self, alpha: int, J: MultiIndex | tuple = ()) -> str:
        J = J if isinstance(J, MultiIndex) else MultiIndex(tuple(J))
        if J.order == 0:
            return self.fiber[alpha]
        return self.fiber[alpha] + "_" + "".join(self.base[i] for i in J.indices)

    @cached_property
    def _jets(self) -> dict[str, tuple[int, MultiIndex]]:
        out = {}
        for m in range(self.order + 1):
            for alpha in range(self.n):
                for J in itertools.combinations_with_replacement(range(self.p), m):
                    out[self.name(alpha, J)] = (alpha, MultiIndex(J))
        if len(out) != self.n * comb(self.p + self.order, self.order):
            raise ValueError("jet coordinate names collide; use distinct single-token base names")
        return out

    @cached_property
    def jet_coordinates(self) -> tuple[str, ...]:
        return tuple(self._jets)

    @cached_property
    def coordinates(self) -> tuple[str, ...]:
        return self.base + self.jet_coordinates

    @property
    def dim(self) -> int:
        return self.p + self.n * comb(self.p + self.order, self.order)

    def lookup(self, name: str) -> tuple[int, MultiIndex]:
        return self._jets[name]

    def is_jet(self, name: str) -> bool:
        return name in self._jets

    def order_of(self, name: str) -> int:
        if name in self._jets:
            return self._jets[name][1].order
        if name in self.base:
            return 0
        raise KeyError(name)

    def expr_order(self, e) -> int:
        """Highest jet order among the coordinates appearing in ``e``."""
        orders = [self.order_of(s.name) for s in sp.sympify(e).free_symbols
                  if s.name in self._jets or s.name in self.base]
        return max(orders, default=0)

    def coordinates_of_order(self, m: int) -> tuple[str, ...]:
        return tuple(c for c in self.jet_coordinates if self._jets[c][1].order == m)

    def with_order(self, k: int) -> "JetSpace":
        return JetSpace(self.base, self.fiber, k)

    def derivative_name(self, name: str, i: int) -> str:
        """Name of ``D_i`` applied to a jet coordinate (may exceed ``order``)."""
        alpha, J = self.with_order(self.order_of(name) + 1)._jets[name]
        return self.name(alpha, J.extend(i))

    def var_table(self, params=(), aux=()) -> VarTable:
        vt = VarTable()
        vt.extend(self.base, "base")
        for c in self.jet_coordinates:
            vt.add(c, "fiber" if self._jets[c][1].order == 0 else "jet")
        vt.extend(params, "group-param")
        vt.extend(aux, "auxiliary")
        return vt


def total_derivative(e, i: int, space: JetSpace):
    """``D_i e``; symbols that are not coordinates of ``space`` are constants."""
    e = sp.sympify(e)
    if isinstance(i, str):
        i = space.base.index(i)
    out = sp.S.Zero
    for s in e.free_symbols:
        name = s.name
        if name == space.base[i]:
            out += sp.diff(e, s)
        elif space.is_jet(name):
            alpha, J = space.lookup(name)
            if J.order >= space.order:
                raise OrderOverflowError(
                    f"D_{space.base[i]} of {name} needs order {J.order + 1} > {space.order}")
            out += sp.diff(e, s) * sp.Symbol(space.name(alpha, J.extend(i)))
    return simplify(out)


@dataclass(frozen=True)
class ProlongedAction:
    """Transforms of every coordinate of ``space`` under a parametrised group element."""

    space: JetSpace
    params: tuple[str, ...]
    identity: tuple
    transforms: tuple[tuple[str, sp.Expr], ...]

    @cached_property
    def mapping(self) -> dict[str, sp.Expr]:
        return dict(self.transforms)

    def __getitem__(self, name: str) -> sp.Expr:
        return self.mapping[name]

    @cached_property
    def _numeric(self):
        names = list(self.params) + list(self.space.coordinates)
        exprs = [self.mapping[c] for c in self.space.coordinates]
        return lambdify(exprs, names)

    def apply(self, params, points) -> np.ndarray:
        """Act by one group element on an ``(m, dim)`` array of jet points."""
        points = np.atleast_2d(np.asarray(points))
        params = np.asarray(params)
        dtype = complex if (np.iscomplexobj(points) or np.iscomplexobj(params)) else float
        m = points.shape[0]
        cols = [np.full(m, t, dtype=dtype) for t in params] + [points[:, j] for j in range(points.shape[1])]
        out = self._numeric(*cols)
        return np.stack([np.broadcast_to(np.asarray(o, dtype=dtype), (m,)) for o in out], axis=1)

    @cached_property
    def jacobian_in_coordinates(self) -> list[list[sp.Expr]]:
        """Symbolic ``d(g.z)_a / dz_b`` for every pair of coordinates."""
        coords = self.space.coordinates
        return [[sp.diff(self.mapping[a], sp.Symbol(b)) for b in coords] for a in coords]

    @cached_property
    def jacobian_in_params(self) -> list[list[sp.Expr]]:
        coords = self.space.coordinates
        return [[sp.diff(self.mapping[a], sp.Symbol(t)) for t in self.params] for a in coords]


def prolong_action(action: "ActionSpec", space: JetSpace) -> ProlongedAction:
    """Prolong a verticalised action to ``space`` by iterated total derivatives.

    Results are memoised per ``(action, space)``.
    """
    return _prolong(action, space)


@lru_cache(maxsize=64)
def _prolong(action: "ActionSpec", space: JetSpace) -> ProlongedAction:
    params = set(action.params)
    fiber_transforms = dict(action.transforms)
    if set(fiber_transforms) != set(space.fiber):
        raise ValueError("action must give a transform for every fiber coordinate")
    for name, e in fiber_transforms.items():
        bad = {s.name for s in e.free_symbols} - params - set(space.fiber)
        if bad:
            raise ValueError(f"transform of {name} involves non-fiber symbols {sorted(bad)}; "
                             "only verticalised actions are supported")
    table: dict[str, sp.Expr] = {x: sp.Symbol(x) for x in space.base}
    for c in space.jet_coordinates:
        alpha, J = space.lookup(c)
        if J.order == 0:
            table[c] = simplify(fiber_transforms[c])
        else:
            parent = space.name(alpha, MultiIndex(J.indices[:-1]))
            table[c] = total_derivative(table[parent], J.indices[-1], space)
    return ProlongedAction(space, tuple(action.params), tuple(action.identity),
                           tuple((c, table[c]) for c in space.coordinates))


def prolong_immersion(psi: Mapping[str, object], space: JetSpace) -> dict[str, sp.Expr]:
    """Jets of the graph ``x -> (x, psi(x))``: ``u^alpha_J -> d_J psi^alpha``."""
    base_syms = [sp.Symbol(x) for x in space.base]
    psi = {k: sp.sympify(v) for k, v in psi.items()}
    if set(psi) != set(space.fiber):
        raise ValueError("immersion must give every fiber coordinate")
    for name, e in psi.items():
        bad = {s.name for s in e.free_symbols} - set(space.base)
        if bad:
            raise ValueError(f"immersion component {name} involves non-base symbols {sorted(bad)}")
    out: dict[str, sp.Expr] = {x: sp.Symbol(x) for x in space.base}
    for c in space.jet_coordinates:
        alpha, J = space.lookup(c)
        e = psi[space.fiber[alpha]]
        for i in J.indices:
            e = sp.diff(e, base_syms[i])
        out[c] = e
    return out
