"""Numeric property suites run by ``congruent selftest``."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import sympy as sp

from .congruence import order_bound_check
from .expr import batch_evaluator, evaluate_batch, lambdify, sample_points
from .forms import OneForm
from .group import ActionSpec, MaurerCartanBasis, params_from_matrix
from .jet import ProlongedAction, prolong_action
from .pipeline import PipelineResult


@dataclass
class SuiteResult:
    name: str
    passed: bool
    worst: float = 0.0
    detail: str = ""
    failures: list[str] = field(default_factory=list)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        tail = f" ({self.detail})" if self.detail else ""
        return f"{status} {self.name}: worst {self.worst:.2e}{tail}"

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "worst": self.worst,
                "detail": self.detail, "failures": self.failures}


def _valid_points(exprs, names, n, rng, box, complex_mode, *, cap: float = 1e4):
    """``n`` sample points where every expression is finite and moderate.

    Points close to the singular locus of a frame amplify rounding error
    without saying anything about invariance, so they are skipped.
    """
    pts = sample_points(names, 40 * n, rng, box=box, complex_mode=complex_mode)
    vals = evaluate_batch(list(exprs), names, pts) if exprs else np.zeros((len(pts), 0))
    ok = np.all(np.isfinite(vals), axis=1) & np.all(np.abs(vals) < cap, axis=1)
    return pts[ok][:n]


def _group_elements(action: ActionSpec, n: int, rng, spread: float):
    return action.random_elements(n, rng, spread)


def function_invariance(exprs: Sequence[sp.Expr], prolonged: ProlongedAction, action: ActionSpec,
                        *, n_group: int = 5, n_points: int = 5, tol: float = 1e-8, seed: int = 0,
                        box=(-2.0, 2.0), spread: float = 0.5, labels: Sequence[str] | None = None,
                        name: str = "function invariance") -> SuiteResult:
    """``|f(g.z) - f(z)| <= tol * (1 + |f(z)|)`` for every ``f``."""
    coords = list(prolonged.space.coordinates)
    labels = list(labels) if labels is not None else [str(e) for e in exprs]
    rng = np.random.default_rng(seed)
    cm = action.complex_mode
    Z = _valid_points(exprs, coords, n_points, rng, box, cm)
    f = batch_evaluator(exprs, coords)
    worst = 0.0
    failures = []
    checked = 0
    for g in _group_elements(action, n_group, rng, spread):
        gZ = prolonged.apply(g, Z)
        a = f(Z).T
        b = f(gZ).T
        ok = np.all(np.isfinite(b), axis=0)
        err = np.abs(b - a)[:, ok] / (1 + np.abs(a[:, ok]))
        checked += int(ok.sum())
        if err.size:
            worst = max(worst, float(err.max()))
            for j in np.nonzero(err.max(axis=1) > tol)[0]:
                if labels[j] not in failures:
                    failures.append(labels[j])
    passed = not failures and checked >= n_group * n_points // 2
    detail = f"{len(exprs)} functions, {checked} (g, z) pairs"
    if failures:
        detail += "; not invariant: " + ", ".join(failures[:5])
    return SuiteResult(name, passed, worst, detail, failures)


def form_invariance(forms: Sequence[OneForm], prolonged: ProlongedAction, action: ActionSpec, *,
                    n_group: int = 5, n_points: int = 5, tol: float = 1e-8, seed: int = 0,
                    box=(-2.0, 2.0), spread: float = 0.5, labels: Sequence[str] | None = None,
                    name: str = "coframe invariance") -> SuiteResult:
    """Pullback of each form by the prolonged action of ``g`` equals the form."""
    space = prolonged.space
    coords = list(space.coordinates)
    labels = list(labels) if labels is not None else [f"form {i + 1}" for i in range(len(forms))]
    cm = action.complex_mode
    rng = np.random.default_rng(seed)
    flat = [w[c] for w in forms for c in coords]
    Z = _valid_points(flat, coords, n_points, rng, box, cm)
    jac = [x for row in prolonged.jacobian_in_coordinates for x in row]
    jf = lambdify(jac, list(prolonged.params) + coords)
    N = len(coords)
    worst = 0.0
    failures: list[str] = []
    checked = 0
    ev = batch_evaluator(flat, coords)
    K = len(forms)
    base = ev(Z).reshape(len(Z), K, N)
    for g in _group_elements(action, n_group, rng, spread):
        gZ = prolonged.apply(g, Z)
        moved = ev(gZ).reshape(len(Z), K, N)
        m = len(Z)
        cols = [np.full(m, t) for t in g] + [Z[:, j] for j in range(N)]
        Jv = np.stack([np.broadcast_to(np.asarray(v), (m,)) for v in jf(*cols)], axis=1).reshape(m, N, N)
        pulled = np.einsum("mic,mcb->mib", moved, Jv)
        for p in range(m):
            if not np.all(np.isfinite(pulled[p])):
                continue
            checked += 1
            err = np.abs(pulled[p] - base[p]).max(axis=1) / (1 + np.abs(base[p]).max(axis=1))
            worst = max(worst, float(err.max()))
            for i in np.nonzero(err > tol)[0]:
                if labels[i] not in failures:
                    failures.append(labels[i])
    passed = not failures and checked >= n_group * n_points // 2
    detail = f"{len(forms)} forms, {checked} (g, z) pairs"
    if failures:
        detail += "; not invariant: " + ", ".join(failures[:5])
    return SuiteResult(name, passed, worst, detail, failures)


def group_law(prolonged: ProlongedAction, action: ActionSpec, *, n_pairs: int = 5,
              n_points: int = 5, tol: float = 1e-8, seed: int = 0, box=(-2.0, 2.0),
              spread: float = 0.5) -> SuiteResult:
    """``g1.(g2.z) = (g1 g2).z`` with the product taken in the matrix representation."""
    if action.matrix is None:
        return SuiteResult("jet group law", True, 0.0, "skipped: no matrix representation")
    rep = action.matrix
    rng = np.random.default_rng(seed)
    coords = list(prolonged.space.coordinates)
    Z = sample_points(coords, n_points, rng, box=box, complex_mode=action.complex_mode)
    G1 = _group_elements(action, n_pairs, rng, spread / 2)
    G2 = _group_elements(action, n_pairs, rng, spread / 2)
    worst = 0.0
    for g1, g2 in zip(G1, G2):
        prod = params_from_matrix(rep, rep.numeric(g1) @ rep.numeric(g2), g1 + g2 - action.identity_values)
        lhs = prolonged.apply(g1, prolonged.apply(g2, Z))
        rhs = prolonged.apply(prod, Z)
        ok = np.all(np.isfinite(lhs), axis=1) & np.all(np.isfinite(rhs), axis=1)
        err = np.abs(lhs[ok] - rhs[ok]) / (1 + np.abs(rhs[ok]))
        if err.size:
            worst = max(worst, float(err.max()))
    return SuiteResult("jet group law", worst <= tol, worst, f"{n_pairs} pairs x {n_points} points")


def mc_right_invariance(basis: MaurerCartanBasis, action: ActionSpec, *, n_h: int = 5,
                        n_points: int = 5, tol: float = 1e-8, seed: int = 0,
                        spread: float = 0.5) -> SuiteResult:
    """``mu(g h)[dR_h v] = mu(g)[v]`` for the right translation ``R_h``.

    The pushed-forward tangent vector is found from the matrix
    representation: ``dG(s)[w] = dG(t)[v] H`` is linear in ``w``.
    """
    rep = action.matrix
    params = list(rep.params)
    r = len(params)
    rng = np.random.default_rng(seed)
    cm = action.complex_mode
    dG = lambdify([sp.diff(x, sp.Symbol(t)) for t in params for x in rep.matrix], params)
    mu = lambdify([w[t] for w in basis.forms for t in params], params)
    m = rep.size

    def dmat(t):
        vals = np.array([complex(v) for v in dG(*t)])
        return vals.reshape(r, m, m)

    def mu_at(t):
        return np.array([complex(v) for v in mu(*t)]).reshape(len(basis.forms), r)

    worst = 0.0
    for h in _group_elements(action, n_h, rng, spread / 2):
        H = rep.numeric(h)
        for t in _group_elements(action, n_points, rng, spread / 2):
            v = rng.standard_normal(r) + (1j * rng.standard_normal(r) if cm else 0)
            s = params_from_matrix(rep, rep.numeric(t) @ H, t + h - action.identity_values)
            target = np.einsum("j,jab->ab", v, dmat(t)) @ H
            A = dmat(s).reshape(r, -1).T
            w, *_ = np.linalg.lstsq(A, target.ravel(), rcond=None)
            lhs = mu_at(s) @ w
            rhs = mu_at(t) @ v
            worst = max(worst, float(np.max(np.abs(lhs - rhs) / (1 + np.abs(rhs)))))
    return SuiteResult("Maurer-Cartan right invariance", worst <= tol, worst,
                       f"{n_h} elements h x {n_points} points")


def matrix_mc_antisymmetry(result: PipelineResult, *, tol: float = 1e-9, seed: int = 0) -> SuiteResult:
    from .coframe import pull_matrix_mc

    p = result.problem
    mmc = pull_matrix_mc(result.frame, result.space, p.action.r, seed=seed, box=p.box,
                         complex_mode=p.complex_mode)
    coords = list(result.space.coordinates)
    m = len(mmc.matrix)
    flat = [mmc.matrix[a][b][c] + mmc.matrix[b][a][c] for a in range(m) for b in range(m) for c in coords]
    rng = np.random.default_rng(seed)
    Z = sample_points(coords, 50, rng, box=p.box, complex_mode=p.complex_mode)
    vals = evaluate_batch(flat, coords, Z)
    vals = vals[np.all(np.isfinite(vals), axis=1)][:10]
    worst = float(np.max(np.abs(vals), initial=0.0))
    ok = mmc.antisymmetric and worst <= tol
    return SuiteResult("matrix Maurer-Cartan antisymmetry", ok, worst, f"entries {list(mmc.entries)}")


def run_selftest(result: PipelineResult, *, seed: int = 0) -> list[SuiteResult]:
    """Every property suite that applies to a completed pipeline run."""
    p = result.problem
    action = p.action
    tol = p.tolerances["invariance"]
    kw = dict(seed=seed, box=p.box, spread=p.group_spread, tol=tol)
    out: list[SuiteResult] = []

    fr = result.frame_report
    msg = "; ".join(fr.messages) if fr.messages else f"{len(fr.normalization)} normalisations"
    out.append(SuiteResult("frame normalisation and equivariance of rho", fr.passed,
                           max([fr.equivariance] + list(fr.normalization.values())), msg))
    if result.invariantization is None:
        return out

    inv = result.invariantization
    coords = list(result.space.coordinates)
    out.append(function_invariance([inv[c] for c in coords], result.prolonged, action,
                                   labels=[f"iota*{c}" for c in coords],
                                   name="invariantised coordinates", **kw))
    out.append(form_invariance(result.coframe.forms, result.prolonged, action,
                               labels=list(result.coframe.labels), **kw))
    st = result.structure
    out.append(SuiteResult("constant structure", st.constant, st.deviation, st.summary()))

    system = result.invariants
    up = prolong_action(action, system.space)
    nonconst = system.nonconstant
    out.append(function_invariance([e.expr for e in nonconst], up, action,
                                   labels=[f"{e.label}/d{system.space.base[e.base]}" for e in nonconst],
                                   name="invariant system", **kw))
    out.append(SuiteResult("order bound k+1", order_bound_check(system), 0.0,
                           f"max order {system.max_order}, k = {system.k}"))
    out.append(group_law(result.prolonged, action, seed=seed, box=p.box, spread=p.group_spread))
    if result.basis is not None:
        out.append(mc_right_invariance(result.basis, action, seed=seed, spread=p.group_spread))
    if result.frame.is_matrix:
        out.append(matrix_mc_antisymmetry(result, seed=seed))
    return out
