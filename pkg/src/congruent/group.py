"""Group actions, matrix representations and Maurer-Cartan forms."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np
import sympy as sp
from scipy.optimize import least_squares

from .expr import evaluate_batch, lambdify, sample_points, simplify, to_text
from .forms import OneForm, TwoForm, coefficient_matrix, exterior_derivative, wedge


class RankDeficientError(ValueError):
    pass


class NotACoframeError(ValueError):
    pass


@dataclass(frozen=True)
class MatrixRep:
    """Square matrix of expressions in the group parameters.

    ``kind`` says how the matrix acts on fiber coordinates: ``"linear"``
    (``u -> G u``, size n) or ``"affine"`` (``[u; 1] -> G [u; 1]``, size n+1).
    """

    rows: tuple[tuple[sp.Expr, ...], ...]
    params: tuple[str, ...]
    kind: str = "affine"

    def __post_init__(self):
        rows = tuple(tuple(sp.sympify(e) for e in r) for r in self.rows)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "params", tuple(self.params))
        m = len(rows)
        if m == 0 or any(len(r) != m for r in rows):
            raise ValueError("matrix representation must be square")
        if self.kind not in ("linear", "affine"):
            raise ValueError(f"unknown matrix action kind {self.kind!r}")

    @property
    def size(self) -> int:
        return len(self.rows)

    @cached_property
    def matrix(self) -> sp.ImmutableMatrix:
        return sp.ImmutableMatrix(self.rows)

    @cached_property
    def inverse(self) -> sp.ImmutableMatrix:
        g = sp.Matrix(self.rows)
        det = simplify(g.det(method="berkowitz"))
        if det == 0:
            raise ValueError("matrix representation is singular")
        adj = g.adjugate(method="berkowitz")
        return sp.ImmutableMatrix(g.shape[0], g.shape[1], [simplify(x / det) for x in adj])

    @cached_property
    def _numeric(self):
        return lambdify(list(self.matrix), list(self.params))

    def numeric(self, values) -> np.ndarray:
        values = np.asarray(values)
        out = self._numeric(*values)
        dtype = complex if np.iscomplexobj(values) else float
        return np.array([complex(v) if dtype is complex else float(v) for v in out],
                        dtype=dtype).reshape(self.size, self.size)

    def check(self, identity) -> None:
        at_id = self.matrix.subs(dict(zip(map(sp.Symbol, self.params), identity)))
        if sp.simplify(at_id - sp.eye(self.size)) != sp.zeros(self.size):
            raise ValueError("matrix representation is not the identity at the identity parameters")


@dataclass(frozen=True)
class ActionSpec:
    """Left action of an r-parameter group on fiber coordinates."""

    params: tuple[str, ...]
    identity: tuple
    transforms: tuple[tuple[str, sp.Expr], ...]
    matrix: MatrixRep | None = None
    field: str = "real"

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(self.params))
        object.__setattr__(self, "identity", tuple(sp.sympify(v) for v in self.identity))
        if isinstance(self.transforms, Mapping):
            object.__setattr__(self, "transforms", tuple(self.transforms.items()))
        object.__setattr__(self, "transforms",
                           tuple((k, sp.sympify(v)) for k, v in self.transforms))
        if len(self.identity) != len(self.params):
            raise ValueError("need one identity value per parameter")
        if self.field not in ("real", "complex"):
            raise ValueError("field must be 'real' or 'complex'")

    @property
    def r(self) -> int:
        return len(self.params)

    @property
    def fiber(self) -> tuple[str, ...]:
        return tuple(k for k, _ in self.transforms)

    @property
    def complex_mode(self) -> bool:
        return self.field == "complex"

    @property
    def identity_values(self) -> np.ndarray:
        return np.array([complex(v) if self.complex_mode else float(v) for v in self.identity])

    def check_identity(self) -> None:
        at_id = dict(zip(map(sp.Symbol, self.params), self.identity))
        for name, e in self.transforms:
            if simplify(e.xreplace(at_id) - sp.Symbol(name)) != 0:
                raise ValueError(f"identity parameters do not fix {name}")
        if self.matrix is not None:
            self.matrix.check(self.identity)

    def entry_action(self) -> "ActionSpec":
        """The same action written in generic matrix-entry symbols ``g_a_b``.

        Used to apply matrix-valued moving frames.
        """
        if self.matrix is None:
            raise ValueError("action has no matrix representation")
        m = self.matrix.size
        n = len(self.fiber)
        want = n if self.matrix.kind == "linear" else n + 1
        if m != want:
            raise ValueError(f"{self.matrix.kind} matrix action on {n} fiber coordinates "
                             f"needs size {want}, got {m}")
        G = entry_symbols(m)
        vec = [sp.Symbol(u) for u in self.fiber] + ([sp.S.One] if self.matrix.kind == "affine" else [])
        transforms = tuple((u, sum(G[a, b] * vec[b] for b in range(m))) for a, u in enumerate(self.fiber))
        names = tuple(s.name for s in G)
        ident = tuple(sp.S.One if a == b else sp.S.Zero for a in range(m) for b in range(m))
        return ActionSpec(names, ident, transforms, None, self.field)

    def random_elements(self, n: int, rng: np.random.Generator, spread: float = 0.5) -> np.ndarray:
        """Parameter vectors uniformly within ``spread`` of the identity."""
        ident = self.identity_values
        out = ident + rng.uniform(-spread, spread, size=(n, self.r))
        if self.complex_mode:
            out = out + 1j * rng.uniform(-spread, spread, size=(n, self.r))
        return out


def entry_symbols(m: int) -> sp.ImmutableMatrix:
    return sp.ImmutableMatrix(m, m, lambda a, b: sp.Symbol(f"g_{a + 1}_{b + 1}"))


@dataclass(frozen=True)
class MaurerCartanBasis:
    forms: tuple[OneForm, ...]
    entries: tuple[tuple[int, int], ...]
    params: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.forms)

    def __getitem__(self, j: int) -> OneForm:
        return self.forms[j]


def maurer_cartan_matrix(rep: MatrixRep) -> list[list[OneForm]]:
    """Entrywise one-forms of ``(dg) g^-1`` in the parameter differentials."""
    g = rep.matrix
    ginv = rep.inverse
    m = rep.size
    parts = {t: (sp.diff(g, sp.Symbol(t)) * ginv) for t in rep.params}
    return [[OneForm.build({t: parts[t][a, b] for t in rep.params}, "group")
             for b in range(m)] for a in range(m)]


def maurer_cartan(rep: MatrixRep, identity: Sequence, *,
                  entries: Sequence[tuple[int, int]] | None = None) -> MaurerCartanBasis:
    """Right-invariant Maurer-Cartan coframe read off ``(dg) g^-1``.

    Entries are picked greedily in row-major order, keeping those that raise
    the rank of the coefficient matrix at the identity, unless ``entries``
    (1-based ``(row, col)`` pairs) overrides the choice.
    """
    omega = maurer_cartan_matrix(rep)
    r = len(rep.params)
    at_id = dict(zip(map(sp.Symbol, rep.params), [sp.sympify(v) for v in identity]))

    def row_at_identity(form: OneForm):
        return [form[t].xreplace(at_id) for t in rep.params]

    if entries is not None:
        chosen = [(int(a), int(b)) for a, b in entries]
        if len(chosen) != r:
            raise RankDeficientError(f"need {r} entries, got {len(chosen)}")
        mat = sp.Matrix([row_at_identity(omega[a - 1][b - 1]) for a, b in chosen])
        if mat.rank() < r:
            raise RankDeficientError("selected Maurer-Cartan entries are dependent at the identity")
    else:
        chosen = []
        rows: list[list] = []
        for a in range(rep.size):
            for b in range(rep.size):
                cand = rows + [row_at_identity(omega[a][b])]
                if sp.Matrix(cand).rank() > len(rows):
                    rows = cand
                    chosen.append((a + 1, b + 1))
                if len(chosen) == r:
                    break
            if len(chosen) == r:
                break
        if len(chosen) < r:
            raise RankDeficientError(
                f"only {len(chosen)} independent Maurer-Cartan entries for {r} parameters")
    forms = tuple(omega[a - 1][b - 1] for a, b in chosen)
    return MaurerCartanBasis(forms, tuple(chosen), tuple(rep.params))


def params_from_matrix(rep: MatrixRep, target: np.ndarray, guess) -> np.ndarray:
    """Numerically recover parameters whose matrix equals ``target``."""
    guess = np.asarray(guess)
    cplx = np.iscomplexobj(guess) or np.iscomplexobj(target)
    r = len(rep.params)

    def unpack(x):
        return x[:r] + 1j * x[r:] if cplx else x

    def resid(x):
        d = (rep.numeric(unpack(x)) - target).ravel()
        return np.concatenate([d.real, d.imag]) if cplx else d

    x0 = np.concatenate([guess.real, guess.imag]) if cplx else guess.astype(float)
    sol = least_squares(resid, x0, xtol=1e-15, ftol=1e-15, gtol=1e-15)
    if np.max(np.abs(resid(sol.x))) > 1e-9:
        raise ValueError("matrix is not reachable from the guess within the representation")
    return unpack(sol.x)


# ---------------------------------------------------------------------------
# structure constants

@dataclass
class StructureReport:
    """Outcome of :func:`structure_constants_of`.

    ``C[i, j, k]`` are the coefficients in ``d w^i = -1/2 C^i_jk w^j ^ w^k``
    (averaged over the sample points).  When ``constant`` is false,
    ``offending`` names the entry that varied most and ``expression`` holds
    its symbolic form when that was cheap to compute.
    """

    constant: bool
    C: np.ndarray
    deviation: float
    coords: tuple[str, ...]
    offending: tuple[int, int, int] | None = None
    expression: sp.Expr | None = None
    points_used: int = 0

    def summary(self) -> str:
        if self.constant:
            return f"CONSTANT (max deviation {self.deviation:.3g})"
        i, j, k = self.offending
        tail = f" = {to_text(self.expression)}" if self.expression is not None else ""
        return f"NONCONSTANT: C^{i + 1}_{j + 1}{k + 1}{tail} (deviation {self.deviation:.3g})"

    def rounded(self, digits: int = 10) -> np.ndarray:
        C = np.real_if_close(self.C)
        out = np.round(C, digits)
        out[out == 0] = 0.0
        return out


def _structure_tensors(forms: Sequence[OneForm], coords: Sequence[str]):
    F = coefficient_matrix(forms, coords)
    N = len(coords)
    syms = [sp.Symbol(c) for c in coords]
    W = []
    for i in range(len(forms)):
        free = [F[i, b].free_symbols for b in range(N)]
        # D[b][a] = dF_ib/dc_a, skipping coordinates the entry does not involve
        D = [[sp.diff(F[i, b], syms[a]) if syms[a] in free[b] else sp.S.Zero for a in range(N)]
             for b in range(N)]
        Wi = sp.zeros(N, N)
        for a in range(N):
            for b in range(a + 1, N):
                v = D[b][a] - D[a][b]
                Wi[a, b] = v
                Wi[b, a] = -v
        W.append(Wi)
    return F, W


def structure_constants_of(forms: Sequence[OneForm], coords: Sequence[str], *,
                           n_points: int = 10, tol: float = 1e-8, seed: int = 0,
                           box=(-2.0, 2.0), complex_mode: bool = False,
                           extra_names: Sequence[str] = (),
                           extra_values: Sequence = ()) -> StructureReport:
    """Structure functions of a coframe, tested for constancy at random points.

    With ``F`` the coefficient matrix (``w = F dc``) and ``W^i`` the
    antisymmetric matrix of ``d w^i`` in the ``dc_a ^ dc_b`` basis, the
    structure functions are ``C^i = -E^T W^i E`` where ``E = F^-1``.
    """
    coords = tuple(coords)
    N = len(coords)
    if len(forms) != N:
        raise NotACoframeError(f"{len(forms)} forms cannot be a coframe on {N} coordinates")
    F, W = _structure_tensors(forms, coords)
    names = list(coords) + list(extra_names)
    flat = list(F) + [x for Wi in W for x in Wi]
    rng = np.random.default_rng(seed)
    samples = []
    budget = 10 * n_points
    pts = sample_points(coords, budget, rng, box=box, complex_mode=complex_mode)
    if extra_names:
        pts = np.hstack([pts, np.tile(np.asarray(extra_values, dtype=pts.dtype), (budget, 1))])
    vals = evaluate_batch(flat, names, pts)
    for row in vals:
        if not np.all(np.isfinite(row)):
            continue
        Fv = row[: N * N].reshape(N, N)
        s = np.linalg.svd(Fv, compute_uv=False)
        if s[-1] <= 1e-10 * s[0]:
            raise NotACoframeError("forms are linearly dependent at a sampled point")
        E = np.linalg.inv(Fv)
        Wv = row[N * N:].reshape(N, N, N)
        C = -np.einsum("aj,iab,bk->ijk", E, Wv, E)
        C = 0.5 * (C - C.swapaxes(1, 2))
        samples.append(C)
        if len(samples) == n_points:
            break
    if len(samples) < n_points:
        raise NotACoframeError(f"only {len(samples)} valid sample points found")
    S = np.stack(samples)
    mean = S.mean(axis=0)
    dev = np.abs(S - S[0])
    scale = 1 + np.abs(S[0])
    ratio = (dev / scale).max(axis=0)
    worst = np.unravel_index(np.argmax(ratio), ratio.shape)
    constant = bool(ratio[worst] <= tol)
    report = StructureReport(constant, mean, float(dev.max()), coords, points_used=len(samples))
    if not constant:
        report.offending = tuple(int(x) for x in worst)
        if N <= 4:
            E = F.inv()
            i, j, k = report.offending
            Ci = -(E.T * W[i] * E)
            report.expression = simplify(Ci[j, k])
    return report


def reconstruct_differential(C: np.ndarray, forms: Sequence[OneForm], i: int) -> TwoForm:
    """``-1/2 sum_jk C^i_jk w^j ^ w^k`` with ``C`` rationalised."""
    pairs = []
    N = len(forms)
    for j in range(N):
        for k in range(N):
            c = sp.nsimplify(float(np.real(C[i, j, k])), rational=True, tolerance=1e-9)
            if c != 0:
                w = wedge(forms[j], forms[k], canonical=False)
                pairs.extend((a, b, -sp.Rational(1, 2) * c * v) for (a, b), v in w.coeffs.items())
    return TwoForm.build(pairs)


def exterior_derivatives(forms: Sequence[OneForm], coords: Sequence[str]) -> list[TwoForm]:
    return [exterior_derivative(f, coords) for f in forms]
