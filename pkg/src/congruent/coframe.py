"""Constant-structure invariant coframes on jet space."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import sympy as sp

from .expr import evaluate_batch, sample_points, simplify, tidy
from .forms import OneForm, numeric_coefficients, pullback_form
from .frame import CrossSection, MovingFrame
from .group import MaurerCartanBasis, NotACoframeError
from .jet import JetSpace

__all__ = [
    "CoframeField",
    "PhantomFormError",
    "build_coframe",
    "pull_matrix_mc",
    "pull_maurer_cartan",
]


class PhantomFormError(ValueError):
    """The differential of a normalised coordinate did not vanish."""


def pull_maurer_cartan(basis: MaurerCartanBasis, frame: MovingFrame,
                       space: JetSpace) -> list[OneForm]:
    """``rho* mu^j``: frame expressions for the parameters, ``dt -> d(rho_t)``."""
    if frame.is_matrix:
        raise ValueError("matrix-form frames go through pull_matrix_mc")
    mapping = frame.as_dict()
    return [pullback_form(mu, mapping, space.coordinates, "jet") for mu in basis.forms]


@dataclass(frozen=True)
class MatrixMC:
    """Entries of ``(d rho) rho^-1`` plus the independent ones picked out."""

    matrix: tuple[tuple[OneForm, ...], ...]
    entries: tuple[tuple[int, int], ...]
    antisymmetric: bool

    @property
    def forms(self) -> list[OneForm]:
        return [self.matrix[a - 1][b - 1] for a, b in self.entries]


def _is_orthogonal(M: sp.Matrix, coords: Sequence[str], rng, box, complex_mode) -> bool:
    pts = sample_points(coords, 50, rng, box=box, complex_mode=complex_mode)
    vals = evaluate_batch(list(M), coords, pts)
    vals = vals[np.all(np.isfinite(vals), axis=1)][:10]
    if not len(vals):
        raise NotACoframeError("frame matrix undefined at every sampled point")
    m = M.rows
    for row in vals:
        A = row.reshape(m, m)
        if np.max(np.abs(A @ A.T - np.eye(m))) > 1e-9:
            return False
    return True


def pull_matrix_mc(frame: MovingFrame | sp.Matrix, space: JetSpace, r: int | None = None, *,
                   seed: int = 0, box=(-2.0, 2.0), complex_mode: bool = False) -> MatrixMC:
    """``(d rho) rho^-1`` computed coefficient-wise on jet space.

    For an orthogonal frame the inverse is the transpose.  When the result is
    antisymmetric the strict upper triangle is returned; otherwise ``r``
    entries are chosen greedily (row-major) by numeric rank.
    """
    M = sp.Matrix(frame.matrix if isinstance(frame, MovingFrame) else frame)
    coords = list(space.coordinates)
    rng = np.random.default_rng(seed)
    if _is_orthogonal(M, coords, rng, box, complex_mode):
        Minv = M.T
    else:
        det = simplify(M.det(method="berkowitz"))
        if det == 0:
            raise NotACoframeError("frame matrix is singular")
        Minv = M.adjugate(method="berkowitz") / det
    m = M.rows
    parts = {}
    for c in coords:
        dM = M.diff(sp.Symbol(c))
        if dM != sp.zeros(m, m):
            parts[c] = dM * Minv
    # entries stay unsimplified: cancel() on nested radicals dominates the run
    # time and every later use of these forms is numeric or differentiation
    omega = tuple(tuple(OneForm.build({c: P[a, b] for c, P in parts.items()}, "jet", canonical=False)
                        for b in range(m)) for a in range(m))
    # antisymmetry test on numbers: symbolic cancellation of radicals is unreliable
    flat = [omega[a][b][c] + omega[b][a][c] for a in range(m) for b in range(m) for c in coords]
    pts = sample_points(coords, 50, rng, box=box, complex_mode=complex_mode)
    vals = evaluate_batch(flat, coords, pts)
    vals = vals[np.all(np.isfinite(vals), axis=1)][:10]
    antisym = bool(len(vals)) and float(np.max(np.abs(vals), initial=0.0)) < 1e-9
    if antisym:
        entries = tuple((a + 1, b + 1) for a in range(m) for b in range(a + 1, m))
        if r is not None and len(entries) != r:
            raise NotACoframeError(f"antisymmetric Maurer-Cartan matrix gives {len(entries)} "
                                   f"forms, expected {r}")
        return MatrixMC(omega, entries, True)
    if r is None:
        raise ValueError("number of forms r is required for a non-antisymmetric frame matrix")
    # greedy numeric rank at one valid point
    z = sample_points(coords, 50, rng, box=box, complex_mode=complex_mode)
    chosen: list[tuple[int, int]] = []
    rows: list[np.ndarray] = []
    for a in range(m):
        for b in range(m):
            if len(chosen) == r:
                break
            V = numeric_coefficients([omega[a][b]], coords, z)[:, 0, :]
            ok = np.all(np.isfinite(V), axis=1)
            v = V[ok][0] if ok.any() else None
            if v is None:
                continue
            cand = np.vstack(rows + [v])
            if np.linalg.matrix_rank(cand, tol=1e-9) > len(rows):
                rows.append(v)
                chosen.append((a + 1, b + 1))
    if len(chosen) < r:
        raise NotACoframeError(f"only {len(chosen)} independent entries in (d rho) rho^-1")
    return MatrixMC(omega, tuple(chosen), False)


@dataclass(frozen=True)
class CoframeField:
    """Ordered invariant coframe on ``J^k`` with a provenance label per form."""

    forms: tuple[OneForm, ...]
    labels: tuple[str, ...]
    kinds: tuple[str, ...]
    space: JetSpace

    def __len__(self) -> int:
        return len(self.forms)

    def __getitem__(self, i: int) -> OneForm:
        return self.forms[i]

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def to_dict(self) -> list[dict]:
        out = []
        for f, lab, kind in zip(self.forms, self.labels, self.kinds):
            out.append({"label": lab, "provenance": kind,
                        "coefficients": f.to_dict(), "text": f.to_text()})
        return out


def build_coframe(inv: Mapping[str, sp.Expr], mc_forms: Sequence[OneForm], space: JetSpace,
                  cs: CrossSection, *, mc_labels: Sequence[str] | None = None,
                  n_points: int = 10, seed: int = 0, box=(-2.0, 2.0),
                  complex_mode: bool = False) -> CoframeField:
    """``d iota* c`` for unnormalised coordinates, then the pulled-back MC forms.

    The differentials of normalised coordinates are the phantom zero forms
    ``d c_k``; they are dropped, and anything else showing up there is an
    error.  Pointwise independence is checked numerically.
    """
    coords = list(space.coordinates)
    forms, labels, kinds = [], [], []
    for c in coords:
        f = inv[c]
        w = OneForm.build({a: tidy(sp.diff(f, sp.Symbol(a))) for a in coords}, "jet", canonical=False)
        if c in cs:
            if not w.is_zero:
                raise PhantomFormError(f"d iota*{c} should vanish but is {w.to_text()}")
            continue
        forms.append(w)
        labels.append(f"d iota*{c}")
        kinds.append("d iota*coordinate")
    if mc_labels is None:
        mc_labels = [f"rho*mu^{j + 1}" for j in range(len(mc_forms))]
    for w, lab in zip(mc_forms, mc_labels):
        forms.append(w)
        labels.append(lab)
        kinds.append("rho*mu")
    if len(forms) != space.dim:
        raise NotACoframeError(f"{len(forms)} forms on a jet space of dimension {space.dim}")
    rng = np.random.default_rng(seed)
    pts = sample_points(coords, 10 * n_points, rng, box=box, complex_mode=complex_mode)
    mats = numeric_coefficients(forms, coords, pts)
    ok = np.all(np.isfinite(mats.reshape(len(pts), -1)), axis=1)
    mats = mats[ok][:n_points]
    if len(mats) < n_points:
        raise NotACoframeError(f"only {len(mats)} valid sample points for the independence check")
    for A in mats:
        s = np.linalg.svd(A, compute_uv=False)
        if s[-1] <= 1e-8 * max(1.0, s[0]):
            raise NotACoframeError("coframe forms are dependent at a sampled point; "
                                   "check the cross-section or the jet order")
    return CoframeField(tuple(forms), tuple(labels), tuple(kinds), space)


def coframe_text(cf: CoframeField) -> str:
    return "\n".join(f"{lab} = {f.to_text()}" for lab, f in zip(cf.labels, cf.forms))

