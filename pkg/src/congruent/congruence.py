"""Complete invariant systems and the local congruence test for immersion pairs."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import sympy as sp
from scipy.optimize import least_squares

from .coframe import CoframeField
from .expr import evaluate_batch, lambdify, sample_points, tidy, to_text
from .forms import OneForm, pullback_form
from .group import ActionSpec
from .jet import JetSpace, ProlongedAction, prolong_immersion


class GridDomainError(ValueError):
    """An invariant is undefined at a point of the comparison grid."""


class RegularityError(ValueError):
    pass


CONGRUENT = "CONGRUENT"
NOT_CONGRUENT = "NOT-CONGRUENT"
NECESSARY_ONLY = "NECESSARY-ONLY-PASS"
INCONCLUSIVE = "INCONCLUSIVE"


@dataclass(frozen=True)
class Invariant:
    expr: sp.Expr
    form: int
    base: int
    order: int
    constant: bool
    label: str = ""


@dataclass(frozen=True)
class InvariantSystem:
    """Coefficients of ``dx^l`` in the pulled-back coframe, as differential functions."""

    entries: tuple[Invariant, ...]
    k: int
    space: JetSpace  # order k+1

    @property
    def nonconstant(self) -> list[Invariant]:
        return [e for e in self.entries if not e.constant]

    @property
    def max_order(self) -> int:
        return max((e.order for e in self.entries if not e.constant), default=0)

    def to_dict(self) -> dict:
        return {"k": self.k, "max_order": self.max_order,
                "invariants": [{"form": e.label, "base": self.space.base[e.base],
                                "order": e.order, "constant": e.constant,
                                "expr": to_text(e.expr)} for e in self.entries]}


def _numerically_constant(e: sp.Expr, space: JetSpace, seed: int, box, complex_mode: bool) -> bool:
    names = sorted(s.name for s in e.free_symbols)
    if not names:
        return True
    rng = np.random.default_rng(seed)
    pts = sample_points(names, 100, rng, box=box, complex_mode=complex_mode)
    vals = evaluate_batch([e], names, pts)[:, 0]
    vals = vals[np.isfinite(vals)][:10]
    if len(vals) < 2:
        return False
    return bool(np.max(np.abs(vals - vals[0])) <= 1e-12 * (1 + abs(vals[0])))


def extract_invariants(cf: CoframeField, space: JetSpace, *, seed: int = 0,
                       box=(-2.0, 2.0), complex_mode: bool = False) -> InvariantSystem:
    """``sum_c f_c D_l(c)`` for every coframe form ``sum_c f_c dc`` and base index ``l``.

    This is the ``dx^l`` coefficient of the form pulled back by a generic
    prolonged graph, written on ``J^(k+1)``.
    """
    k = space.order
    up = space.with_order(k + 1)
    entries = []
    for i, w in enumerate(cf.forms):
        for l in range(space.p):
            total = sp.S.Zero
            for c, f in w:
                if c in space.base:
                    if c == space.base[l]:
                        total += f
                else:
                    total += f * sp.Symbol(space.derivative_name(c, l))
            e = tidy(total)
            const = not e.free_symbols or _numerically_constant(e, up, seed, box, complex_mode)
            if const and e.free_symbols:
                # radicals can hide a constant from cancel(); pin it numerically
                val = complex(evaluate_batch([e], sorted(s.name for s in e.free_symbols),
                                             _valid_point(e, seed, box, complex_mode))[0, 0])
                e = sp.nsimplify(val.real if abs(val.imag) < 1e-12 else val,
                                 rational=True, tolerance=1e-10)
            entries.append(Invariant(e, i, l, up.expr_order(e), const, cf.labels[i]))
    return InvariantSystem(tuple(entries), k, up)


def _valid_point(e, seed, box, complex_mode):
    names = sorted(s.name for s in e.free_symbols)
    rng = np.random.default_rng(seed)
    pts = sample_points(names, 100, rng, box=box, complex_mode=complex_mode)
    vals = evaluate_batch([e], names, pts)[:, 0]
    return pts[np.isfinite(vals)][:1]


def order_bound_check(inv: InvariantSystem) -> bool:
    """Every invariant has differential order at most ``k + 1``."""
    return all(e.order <= inv.k + 1 for e in inv.entries)


# ---------------------------------------------------------------------------
# immersions

@dataclass
class ImmersionSpec:
    """A map from base to fiber coordinates, symbolic or sampled.

    Sampled mode holds fiber values on a tensor grid of base points and
    differentiates by a least-squares polynomial fit of degree ``degree``
    over the ``window`` nearest grid points along each axis.
    """

    space_base: tuple[str, ...]
    fiber: tuple[str, ...]
    exprs: dict[str, sp.Expr] | None = None
    axes: tuple[np.ndarray, ...] | None = None
    values: dict[str, np.ndarray] | None = None
    degree: int = 6
    window: int = 9
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def symbolic(cls, base: Sequence[str], psi: Mapping[str, object]) -> "ImmersionSpec":
        exprs = {k: sp.sympify(v) for k, v in psi.items()}
        return cls(tuple(base), tuple(exprs), exprs=exprs)

    @classmethod
    def sampled(cls, base: Sequence[str], axes: Sequence, values: Mapping[str, object],
                degree: int = 6, window: int = 9) -> "ImmersionSpec":
        axes = tuple(np.asarray(a, dtype=float) for a in axes)
        vals = {k: np.asarray(v, dtype=float) for k, v in values.items()}
        shape = tuple(len(a) for a in axes)
        for k, v in vals.items():
            if v.shape != shape:
                raise ValueError(f"sampled values for {k} have shape {v.shape}, grid is {shape}")
        if len(axes) != len(base):
            raise ValueError("one grid axis per base coordinate is required")
        return cls(tuple(base), tuple(vals), axes=axes, values=vals,
                   degree=degree, window=max(window, degree + 1))

    @property
    def is_symbolic(self) -> bool:
        return self.exprs is not None

    def to_dict(self) -> dict:
        if self.is_symbolic:
            return {"immersion": {k: to_text(v) for k, v in self.exprs.items()}}
        return {"sampled": {"axes": [a.tolist() for a in self.axes],
                            "values": {k: v.tolist() for k, v in self.values.items()}}}

    def _symbolic_jets(self, space: JetSpace):
        key = ("sym", space)
        if key not in self._cache:
            table = prolong_immersion(self.exprs, space)
            f = lambdify([table[c] for c in space.coordinates], list(space.base))
            self._cache[key] = f
        return self._cache[key]

    def jets(self, points, space: JetSpace) -> np.ndarray:
        """Jet coordinates of the graph at base ``points``: shape ``(m, dim)``."""
        points = np.atleast_2d(np.asarray(points))
        if points.shape[1] != space.p:
            raise ValueError(f"base points need {space.p} components")
        m = len(points)
        if self.is_symbolic:
            f = self._symbolic_jets(space)
            dtype = complex if np.iscomplexobj(points) else float
            out = f(*[points[:, i] for i in range(space.p)])
            return np.stack([np.broadcast_to(np.asarray(o, dtype=dtype), (m,)) for o in out], axis=1)
        return np.stack([self._sampled_jet(pt, space) for pt in points])

    def _sampled_jet(self, pt, space: JetSpace) -> np.ndarray:
        if np.iscomplexobj(pt):
            raise ValueError("sampled immersions are real-valued")
        p = space.p
        sub_idx = []
        for i in range(p):
            ax = self.axes[i]
            j = int(np.argmin(np.abs(ax - pt[i])))
            lo = min(max(0, j - self.window // 2), max(0, len(ax) - self.window))
            sub_idx.append(np.arange(lo, min(len(ax), lo + self.window)))
        grids = np.meshgrid(*[self.axes[i][sub_idx[i]] - pt[i] for i in range(p)], indexing="ij")
        X = np.stack([g.ravel() for g in grids], axis=1)
        exps = [e for e in itertools.product(range(self.degree + 1), repeat=p) if sum(e) <= self.degree]
        V = np.stack([np.prod(X ** np.array(e), axis=1) for e in exps], axis=1)
        out = []
        for c in space.coordinates:
            if c in space.base:
                out.append(pt[space.base.index(c)])
                continue
            alpha, J = space.lookup(c)
            vals = self.values[space.fiber[alpha]][np.ix_(*sub_idx)].ravel()
            coef, *_ = np.linalg.lstsq(V, vals, rcond=None)
            e = tuple(J.indices.count(i) for i in range(p))
            out.append(coef[exps.index(e)] * np.prod([math.factorial(x) for x in e]))
        return np.array(out, dtype=float)

    def check_regular(self, points, space: JetSpace) -> None:
        """The fiber map must have rank ``p`` (its graph is always an immersion,
        but a degenerate fiber map makes the frame undefined)."""
        one = space.with_order(1)
        J = self.jets(points, one)
        p, n = space.p, space.n
        for row in J:
            D = np.array([[row[one.coordinates.index(one.name(a, (i,)))] for i in range(p)]
                          for a in range(n)])
            if not np.all(np.isfinite(D)):
                raise RegularityError("immersion undefined at a grid point")
            s = np.linalg.svd(D, compute_uv=False)
            if s[-1] <= 1e-10 * max(1.0, s[0]):
                raise RegularityError("immersion is not regular (Jacobian rank < p) at a grid point")


def pullback_report(cf: CoframeField, psi: ImmersionSpec) -> list[OneForm]:
    """Pull each coframe form back by the prolonged graph of a symbolic immersion."""
    if not psi.is_symbolic:
        raise ValueError("pullback_report needs a symbolic immersion")
    table = prolong_immersion(psi.exprs, cf.space)
    return [pullback_form(w, table, cf.space.base, "base") for w in cf.forms]


def apply_group(action: ActionSpec, params: Mapping[str, object] | Sequence,
                psi: ImmersionSpec) -> ImmersionSpec:
    """``g . psi`` for a symbolic immersion (fiber-wise action, base fixed)."""
    if not isinstance(params, Mapping):
        params = dict(zip(action.params, params))
    subs = {sp.Symbol(k): sp.sympify(v) for k, v in params.items()}
    subs.update({sp.Symbol(u): e for u, e in psi.exprs.items()})
    return ImmersionSpec.symbolic(psi.space_base, {u: e.xreplace(subs) for u, e in action.transforms})


# ---------------------------------------------------------------------------
# decision

@dataclass
class CongruenceVerdict:
    decision: str
    witness: dict[str, complex | float] | None
    witness_residual: float
    discrepancies: list[dict]
    tolerances: dict[str, float]
    x0: tuple
    notes: list[str] = field(default_factory=list)
    starts_tried: int = 0

    @property
    def exit_code(self) -> int:
        return {CONGRUENT: 0, NOT_CONGRUENT: 1}.get(self.decision, 2)

    def to_dict(self) -> dict:
        def num(v):
            v = complex(v)
            return v.real if v.imag == 0 else [v.real, v.imag]
        return {
            "decision": self.decision,
            "x0": [num(v) for v in self.x0],
            "witness": None if self.witness is None else {k: num(v) for k, v in self.witness.items()},
            "witness_residual": self.witness_residual,
            "discrepancies": self.discrepancies,
            "tolerances": self.tolerances,
            "notes": self.notes,
        }

    def to_text(self) -> str:
        lines = [f"decision: {self.decision}"]
        if self.witness is not None:
            lines.append("witness: " + ", ".join(f"{k}={_fmt(v)}" for k, v in self.witness.items()))
        lines.append(f"witness residual: {self.witness_residual:.3e}")
        lines.append("invariant discrepancies:")
        for d in self.discrepancies:
            lines.append(f"  [{d['form']} / d{d['base']}] max {d['max']:.3e}  {d['expr']}")
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines)


def _fmt(v) -> str:
    v = complex(v)
    return f"{v.real:.10g}" if v.imag == 0 else f"{v.real:.10g}{v.imag:+.10g}j"


def comparison_grid(x0: Sequence, p: int, half_width: float = 0.1, per_axis: int | None = None):
    x0 = np.asarray(x0)
    n = per_axis if per_axis is not None else 2 * p + 1
    offs = np.linspace(-half_width, half_width, n)
    pts = np.array(list(itertools.product(offs, repeat=p)))
    return x0[None, :] + pts


def find_witness(prolonged: ProlongedAction, jet1: np.ndarray, jet2: np.ndarray, *,
                 complex_mode: bool = False, tol: float = 1e-6, starts: int = 8,
                 max_iter: int = 200, spread: float = 0.5, seed: int = 0):
    """Least-squares search for ``g`` with ``g . jet1 = jet2``.

    Starts at the identity, then from ``starts`` random perturbations of it.
    Returns ``(params or None, best residual, number of starts tried)``.
    """
    r = len(prolonged.params)
    ident = np.array([complex(v) if complex_mode else float(v) for v in prolonged.identity])
    scale = 1.0 + float(np.max(np.abs(jet2)))

    def unpack(x):
        return x[:r] + 1j * x[r:] if complex_mode else x

    def resid(x):
        d = prolonged.apply(unpack(x), jet1[None, :])[0] - jet2
        d = np.nan_to_num(d, nan=1e6, posinf=1e6, neginf=-1e6)
        return np.concatenate([d.real, d.imag]) if complex_mode else d

    def pack(v):
        return np.concatenate([v.real, v.imag]) if complex_mode else v.real.astype(float)

    rng = np.random.default_rng(seed)
    seeds = [ident] + [ident + rng.uniform(-spread, spread, r)
                       + (1j * rng.uniform(-spread, spread, r) if complex_mode else 0)
                       for _ in range(starts)]
    best = (None, math.inf)
    for n, s in enumerate(seeds, 1):
        sol = least_squares(resid, pack(np.asarray(s)), method="lm", max_nfev=max_iter * (2 * r + 1),
                            xtol=1e-15, ftol=1e-15, gtol=1e-15)
        res = float(np.max(np.abs(resid(sol.x)))) if len(sol.fun) else 0.0
        if res < best[1]:
            best = (unpack(sol.x), res)
        if res <= tol * scale:
            return unpack(sol.x), res, n
    return None, best[1], len(seeds)


def decide_congruence(prolonged: ProlongedAction, inv: InvariantSystem,
                      psi1: ImmersionSpec, psi2: ImmersionSpec, x0: Sequence, *,
                      tol: float = 1e-6, half_width: float = 0.1, seed: int = 0,
                      complex_mode: bool = False, constant_structure: bool = True,
                      starts: int = 8, max_iter: int = 200) -> CongruenceVerdict:
    """Local congruence of ``psi1`` and ``psi2`` near ``x0``.

    Step 1 compares every nonconstant invariant on a grid of ``2p+1`` points
    per axis; a mismatch beyond ``tol * (1 + scale)`` decides NOT-CONGRUENT.
    Step 2 looks for ``g`` with ``g . j^k psi1(x0) = j^k psi2(x0)``.  A
    failed search is INCONCLUSIVE, never a disproof.  With nonconstant
    structure the best possible outcome is NECESSARY-ONLY-PASS.
    """
    space = prolonged.space
    up = inv.space
    x0 = tuple(complex(v) if complex_mode else float(v) for v in np.atleast_1d(x0))
    if len(x0) != space.p:
        raise ValueError(f"x0 needs {space.p} components")
    grid = comparison_grid(np.array(x0), space.p, half_width)
    for psi in (psi1, psi2):
        psi.check_regular(grid, space)
    tols = {"tol": tol, "half_width": half_width, "witness_tol": tol}
    notes = [] if constant_structure else ["coframe structure is not constant: necessary conditions only"]

    J1 = psi1.jets(grid, up)
    J2 = psi2.jets(grid, up)
    noncon = inv.nonconstant
    vals1 = evaluate_batch([e.expr for e in noncon], up.coordinates, J1)
    vals2 = evaluate_batch([e.expr for e in noncon], up.coordinates, J2)
    if not (np.all(np.isfinite(vals1)) and np.all(np.isfinite(vals2))):
        bad = [to_text(e.expr) for j, e in enumerate(noncon)
               if not (np.all(np.isfinite(vals1[:, j])) and np.all(np.isfinite(vals2[:, j])))]
        raise GridDomainError(f"invariant undefined on the comparison grid: {bad[0]}")
    discrepancies = []
    failed = None
    for j, e in enumerate(noncon):
        d = np.abs(vals1[:, j] - vals2[:, j])
        scale = 1 + np.maximum(np.abs(vals1[:, j]), np.abs(vals2[:, j]))
        rel = float(np.max(d / scale))
        discrepancies.append({"form": e.label, "base": space.base[e.base], "expr": to_text(e.expr),
                              "max": float(np.max(d)), "relative": rel})
        if rel > tol and failed is None:
            failed = e
    if failed is not None:
        notes.append(f"invariant {to_text(failed.expr)} differs")
        return CongruenceVerdict(NOT_CONGRUENT, None, math.nan, discrepancies, tols, x0, notes)

    idx0 = np.array([x0])
    j1 = psi1.jets(idx0, space)[0]
    j2 = psi2.jets(idx0, space)[0]
    g, res, tried = find_witness(prolonged, j1, j2, complex_mode=complex_mode, tol=tol,
                                 starts=starts, max_iter=max_iter, seed=seed)
    if g is None:
        notes.append("no group element matching the jets at x0 was found")
        return CongruenceVerdict(INCONCLUSIVE, None, res, discrepancies, tols, x0, notes, tried)
    witness = {t: (complex(v) if complex_mode else float(np.real(v)))
               for t, v in zip(prolonged.params, g)}
    decision = CONGRUENT if constant_structure else NECESSARY_ONLY
    return CongruenceVerdict(decision, witness, res, discrepancies, tols, x0, notes, tried)
