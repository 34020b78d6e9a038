"""Cross-sections, moving frames and invariantisation."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import sympy as sp

from .expr import evaluate_batch, probably_equal, sample_points, simplify, to_text
from .group import ActionSpec
from .jet import JetSpace, ProlongedAction, prolong_action


class UnsolvableNormalizationError(ValueError):
    def __init__(self, equations: Sequence[sp.Expr], unsolved: Sequence[str]):
        self.equations = list(equations)
        self.unsolved = list(unsolved)
        eqs = "; ".join(f"{to_text(e)} = 0" for e in self.equations)
        super().__init__(f"normalization equations not solvable by the built-in strategy "
                         f"(unsolved parameters {', '.join(unsolved)}): {eqs}")


class InconsistentCrossSectionError(ValueError):
    pass


class CrossSectionError(ValueError):
    """The cross-section does not fit the group or the jet space."""


@dataclass(frozen=True)
class CrossSection:
    """Coordinates normalised to constants, in solving order."""

    entries: tuple[tuple[str, sp.Rational], ...]

    def __post_init__(self):
        entries = tuple((str(k), sp.Rational(v)) for k, v in
                        (self.entries.items() if isinstance(self.entries, Mapping) else self.entries))
        names = [k for k, _ in entries]
        if len(set(names)) != len(names):
            raise ValueError("cross-section coordinates must be distinct")
        object.__setattr__(self, "entries", entries)

    @property
    def coordinates(self) -> tuple[str, ...]:
        return tuple(k for k, _ in self.entries)

    def value(self, name: str) -> sp.Rational:
        return dict(self.entries)[name]

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, name: str) -> bool:
        return name in self.coordinates


@dataclass(frozen=True)
class MovingFrame:
    """Either parameter form (``params``) or matrix form (``matrix``)."""

    params: tuple[tuple[str, sp.Expr], ...] | None = None
    matrix: sp.ImmutableMatrix | None = None
    branches: tuple[str, ...] = ()
    source: str = "solver"

    def __post_init__(self):
        if (self.params is None) == (self.matrix is None):
            raise ValueError("a moving frame has exactly one of parameter or matrix form")
        if self.params is not None:
            items = self.params.items() if isinstance(self.params, Mapping) else self.params
            object.__setattr__(self, "params", tuple((str(k), sp.sympify(v)) for k, v in items))
        if self.matrix is not None:
            object.__setattr__(self, "matrix", sp.ImmutableMatrix(self.matrix))

    @property
    def is_matrix(self) -> bool:
        return self.matrix is not None

    def as_dict(self) -> dict[str, sp.Expr]:
        return dict(self.params or ())

    def group_matrix(self, action: ActionSpec) -> sp.ImmutableMatrix:
        if self.is_matrix:
            return self.matrix
        if action.matrix is None:
            raise ValueError("action has no matrix representation")
        subs = {sp.Symbol(k): v for k, v in self.params}
        return sp.ImmutableMatrix(action.matrix.matrix.xreplace(subs))

    def to_dict(self) -> dict:
        if self.is_matrix:
            return {"matrix": [[to_text(x) for x in self.matrix.row(i)]
                               for i in range(self.matrix.rows)], "source": self.source}
        return {"params": {k: to_text(v) for k, v in self.params},
                "branches": list(self.branches), "source": self.source}


def _check_coordinates(cs: CrossSection, space: JetSpace) -> None:
    for k in cs.coordinates:
        if k not in space.coordinates:
            raise CrossSectionError(f"cross-section coordinate {k!r} is not a coordinate of "
                                    f"J^{space.order}; raise the jet order")


# ---------------------------------------------------------------------------
# sequential normalisation solver

_LINEAR, _SINCOS_PAIR, _SINCOS, _RADICAL = 0, 1, 2, 3


def _numerator(e: sp.Expr) -> sp.Expr:
    return sp.expand(sp.numer(sp.together(e)))


def _poly_in(num: sp.Expr, t: sp.Symbol):
    try:
        return sp.Poly(num, t)
    except sp.PolynomialError:
        return None


def _sincos_form(num: sp.Expr, t: sp.Symbol):
    """``(A, B, K)`` with ``num = A cos t + B sin t + K`` if that shape holds."""
    S, C = sp.Dummy("S"), sp.Dummy("C")
    rep = num.xreplace({sp.sin(t): S, sp.cos(t): C})
    if t in rep.free_symbols or not (num.has(sp.sin(t)) or num.has(sp.cos(t))):
        return None
    try:
        P = sp.Poly(rep, S, C)
    except sp.PolynomialError:
        return None
    if P.total_degree() > 1:
        return None
    A = P.coeff_monomial(C)
    B = P.coeff_monomial(S)
    K = P.coeff_monomial(1)
    return simplify(A), simplify(B), simplify(K)


def _radical(expr: sp.Expr) -> sp.Expr:
    num, den = sp.fraction(sp.cancel(expr))
    return sp.sqrt(num) / sp.sqrt(den)


@dataclass
class _Step:
    param: str
    value: sp.Expr
    consumed: tuple[int, ...]
    branch: str = ""


def _candidates(eqs: dict[int, sp.Expr], unsolved: list[str]):
    """All admissible (rank, complexity, eq index, param index, step, alternative) tuples."""
    out = []
    usyms = {sp.Symbol(t) for t in unsolved}
    for idx, num in eqs.items():
        present = [t for t in unsolved if num.has(sp.Symbol(t))]
        for pi, t in enumerate(unsolved):
            ts = sp.Symbol(t)
            if t not in present:
                continue
            P = _poly_in(num, ts)
            if P is not None and P.degree() == 1:
                a1, a0 = P.coeff_monomial(ts), P.coeff_monomial(1)
                if simplify(a1) != 0:
                    val = simplify(-a0 / a1)
                    out.append((_LINEAR, sp.count_ops(a1), idx, pi, _Step(t, val, (idx,)), None))
                continue
            if P is not None and P.degree() == 2 and P.coeff_monomial(ts) == 0:
                a2, a0 = P.coeff_monomial(ts ** 2), P.coeff_monomial(1)
                if simplify(a2) != 0:
                    r = _radical(-a0 / a2)
                    out.append((_RADICAL, sp.count_ops(a2), idx, pi,
                                _Step(t, r, (idx,), f"{t}: +sqrt"), _Step(t, -r, (idx,), f"{t}: -sqrt")))
                continue
            form = _sincos_form(num, ts)
            if form is None:
                continue
            A, B, K = form
            others = usyms - {ts}
            # a second equation in the same angle gives a linear system for (cos, sin)
            for jdx, num2 in eqs.items():
                if jdx == idx:
                    continue
                form2 = _sincos_form(num2, ts)
                if form2 is None:
                    continue
                A2, B2, K2 = form2
                det = simplify(A * B2 - A2 * B)
                if det == 0 or any(x.free_symbols & others for x in (A, B, K, A2, B2, K2)):
                    continue
                cos_t = simplify((-K * B2 + K2 * B) / det)
                sin_t = simplify((-A * K2 + A2 * K) / det)
                out.append((_SINCOS_PAIR, sp.count_ops(det), idx, pi,
                            _Step(t, sp.atan2(sin_t, cos_t), (idx, jdx)), None))
            if K == 0 and (A != 0 or B != 0):
                out.append((_SINCOS, sp.count_ops(A) + sp.count_ops(B), idx, pi,
                            _Step(t, sp.atan2(A, -B), (idx,), f"{t}: atan2(A,-B)"),
                            _Step(t, sp.atan2(-A, B), (idx,), f"{t}: atan2(-A,B)")))
    out.sort(key=lambda c: (c[0], c[1], c[2], c[3]))
    return out


def _solve_sequential(equations: list[sp.Expr], params: Sequence[str], choices: Sequence[int]):
    """Run the solver; ``choices[k]`` picks the branch at the k-th branching step."""
    eqs = {i: _numerator(e) for i, e in enumerate(equations)}
    unsolved = list(params)
    steps: list[_Step] = []
    branch_count = 0
    while unsolved:
        eqs = {i: e for i, e in eqs.items() if e != 0}
        cands = _candidates(eqs, unsolved)
        if not cands:
            raise UnsolvableNormalizationError(list(eqs.values()), unsolved)
        _, _, _, _, step, alt = cands[0]
        if alt is not None:
            pick = choices[branch_count] if branch_count < len(choices) else 0
            branch_count += 1
            step = alt if pick else step
        steps.append(step)
        unsolved.remove(step.param)
        for i in step.consumed:
            eqs.pop(i)
        sub = {sp.Symbol(step.param): step.value}
        eqs = {i: _numerator(e.xreplace(sub)) for i, e in eqs.items()}
    leftover = {i: e for i, e in eqs.items() if simplify(e) != 0}
    # back-substitute in reverse order
    solution: dict[str, sp.Expr] = {}
    for step in reversed(steps):
        val = step.value.xreplace({sp.Symbol(k): v for k, v in solution.items()})
        solution[step.param] = simplify(val)
    return solution, steps, branch_count, list(leftover.values())


def _identity_locus_points(space: JetSpace, cs: CrossSection, n: int, rng, box, complex_mode):
    pts = sample_points(space.coordinates, n, rng, box=box, complex_mode=complex_mode)
    for k, v in cs.entries:
        pts[:, space.coordinates.index(k)] = float(v)
    return pts


def solve_normalization(prolonged: ProlongedAction, cs: CrossSection, *, seed: int = 0,
                        box=(-2.0, 2.0), complex_mode: bool = False,
                        trials: int = 20, tol: float = 1e-9) -> MovingFrame:
    """Solve ``A*u^k = c_k`` for the group parameters.

    Strategy, applied one parameter at a time (cheapest first): an equation
    linear in a parameter; a pair of equations linear in ``(cos t, sin t)``;
    one homogeneous equation in ``(cos t, sin t)``; an equation
    ``a t^2 + b = 0``.  Branch choices are made so that points of the
    identity locus (normalised coordinates at their constants) map to the
    identity as often as possible; ties keep the principal branch.
    """
    r = len(prolonged.params)
    if len(cs) != r:
        raise CrossSectionError(f"cross-section has {len(cs)} entries; the group has {r} parameters")
    _check_coordinates(cs, prolonged.space)
    equations = [prolonged[k] - v for k, v in cs.entries]
    solution, steps, nbranch, leftover = _solve_sequential(equations, prolonged.params, ())
    if leftover:
        raise InconsistentCrossSectionError(
            "equations left unsatisfied after solving: " + "; ".join(to_text(e) for e in leftover))
    best = (solution, steps)
    if nbranch:
        rng = np.random.default_rng(seed)
        pts = _identity_locus_points(prolonged.space, cs, 40, rng, box, complex_mode)
        ident = np.array([complex(v) for v in prolonged.identity])
        best_score = -1.0
        for choice in itertools.product((0, 1), repeat=min(nbranch, 6)):
            try:
                sol, st, _, left = _solve_sequential(equations, prolonged.params, choice)
            except UnsolvableNormalizationError:
                continue
            if left:
                continue
            vals = evaluate_batch([sol[t] for t in prolonged.params],
                                  prolonged.space.coordinates, pts)
            ok = np.all(np.isfinite(vals), axis=1)
            hits = np.all(np.abs(vals[ok] - ident) < 1e-8, axis=1)
            score = hits.mean() if ok.any() else 0.0
            if score > best_score + 1e-12:
                best_score, best = score, (sol, st)
    solution, steps = best
    frame = MovingFrame(tuple((t, solution[t]) for t in prolonged.params),
                        branches=tuple(s.branch for s in steps if s.branch))
    subs = {sp.Symbol(t): solution[t] for t in prolonged.params}
    for k, v in cs.entries:
        lhs = prolonged[k].xreplace(subs)
        if not probably_equal(lhs, v, trials, tol, seed=seed, box=box, complex_mode=complex_mode):
            raise InconsistentCrossSectionError(f"solved frame does not normalise {k} to {v}")
    return frame


# ---------------------------------------------------------------------------
# checks and invariantisation

@dataclass
class FrameReport:
    passed: bool
    normalization: dict[str, float] = field(default_factory=dict)
    equivariance: float = float("nan")
    equivariance_checked: int = 0
    messages: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "normalization_residuals": self.normalization,
                "equivariance_residual": self.equivariance, "messages": self.messages}


def _frame_transforms(frame: MovingFrame, action: ActionSpec, space: JetSpace) -> dict[str, sp.Expr]:
    """Prolonged transforms with the frame substituted (not simplified)."""
    if frame.is_matrix:
        entry = action.entry_action()
        pro = prolong_action(entry, space)
        m = frame.matrix
        subs = {sp.Symbol(f"g_{a + 1}_{b + 1}"): m[a, b] for a in range(m.rows) for b in range(m.cols)}
    else:
        pro = prolong_action(action, space)
        subs = {sp.Symbol(k): v for k, v in frame.params}
    return {c: pro[c].xreplace(subs) for c in space.coordinates}


def verify_frame(frame: MovingFrame, prolonged: ProlongedAction, cs: CrossSection,
                 action: ActionSpec, *, seed: int = 0, box=(-2.0, 2.0),
                 n_points: int = 20, n_pairs: int = 5, tol: float = 1e-8,
                 group_spread: float = 0.5) -> FrameReport:
    """Check normalisation residuals and equivariance ``rho(g.z) = rho(z) g^-1``."""
    space = prolonged.space
    _check_coordinates(cs, space)
    complex_mode = action.complex_mode
    rng = np.random.default_rng(seed)
    report = FrameReport(True)
    coords = list(space.coordinates)

    transformed = _frame_transforms(frame, action, space)
    pts = sample_points(coords, 10 * n_points, rng, box=box, complex_mode=complex_mode)
    vals = evaluate_batch([transformed[k] for k in cs.coordinates], coords, pts)
    ok = np.all(np.isfinite(vals), axis=1)
    vals = vals[ok][:n_points]
    if len(vals) < n_points:
        report.passed = False
        report.messages.append(f"frame undefined at too many sample points ({len(vals)} valid)")
    for j, (k, c) in enumerate(cs.entries):
        res = float(np.max(np.abs(vals[:, j] - float(c)))) if len(vals) else float("inf")
        report.normalization[k] = res
        if not res <= tol * (1 + abs(float(c))):
            report.passed = False
            report.messages.append(f"normalization residual for {k} is {res:.3g}")

    if action.matrix is None:
        report.messages.append("no matrix representation; equivariance not checked")
        return report
    M = frame.group_matrix(action)
    Mfun = [sp.lambdify(coords, M, modules="numpy")]
    worst = 0.0
    checked = 0
    gs = action.random_elements(10 * n_pairs, rng, group_spread)
    zs = sample_points(coords, 10 * n_pairs, rng, box=box, complex_mode=complex_mode)
    for g, z in zip(gs, zs):
        gz = prolonged.apply(g, z[None, :])[0]
        with np.errstate(all="ignore"):
            Mz = np.array(Mfun[0](*z), dtype=complex)
            Mgz = np.array(Mfun[0](*gz), dtype=complex)
        if not (np.all(np.isfinite(Mz)) and np.all(np.isfinite(Mgz))):
            continue
        if not complex_mode and (np.abs(Mz.imag).max() > 0 or np.abs(Mgz.imag).max() > 0):
            continue
        G = action.matrix.numeric(g)
        expect = Mz @ np.linalg.inv(G)
        err = float(np.max(np.abs(Mgz - expect)) / (1 + np.max(np.abs(expect))))
        worst = max(worst, err)
        checked += 1
        if checked == n_pairs:
            break
    report.equivariance = worst
    report.equivariance_checked = checked
    if checked < n_pairs:
        report.passed = False
        report.messages.append(f"only {checked} valid (g, z) pairs for the equivariance check")
    if not worst <= tol:
        report.passed = False
        report.messages.append(f"equivariance of rho fails: residual {worst:.3g}")
    return report


def invariantize(prolonged: ProlongedAction, frame: MovingFrame, cs: CrossSection,
                 action: ActionSpec, *, seed: int = 0, box=(-2.0, 2.0),
                 tol: float = 1e-9) -> dict[str, sp.Expr]:
    """``iota* c`` for every coordinate ``c`` of the jet space.

    Normalised coordinates come out as their constants; when simplification
    cannot show that structurally (radicals in matrix frames), it is
    confirmed numerically before the constant is used.
    """
    space = prolonged.space
    raw = _frame_transforms(frame, action, space)
    out: dict[str, sp.Expr] = {}
    for c in space.coordinates:
        e = simplify(raw[c])
        if c in cs:
            v = cs.value(c)
            if e != v:
                if not probably_equal(e, v, 20, tol, seed=seed, box=box,
                                      complex_mode=action.complex_mode):
                    raise InconsistentCrossSectionError(f"iota*{c} is not the constant {v}")
                e = v
        out[c] = e
    return out


@dataclass
class FreedomDiagnosis:
    free: bool
    r: int
    max_rank: int
    ranks: list[int]
    advice: str = ""

    def to_dict(self) -> dict:
        return {"diagnosis": "FREE" if self.free else "NOT-FREE", "r": self.r,
                "max_rank": self.max_rank, "ranks": self.ranks, "advice": self.advice}


def check_local_freedom(prolonged: ProlongedAction, *, n_points: int = 10, seed: int = 0,
                        box=(-2.0, 2.0), complex_mode: bool = False) -> FreedomDiagnosis:
    """Rank of the parameter Jacobian of the prolonged action at the identity."""
    r = len(prolonged.params)
    if r == 0:
        return FreedomDiagnosis(True, 0, 0, [])
    ident = {sp.Symbol(t): v for t, v in zip(prolonged.params, prolonged.identity)}
    J = [[e.xreplace(ident) for e in row] for row in prolonged.jacobian_in_params]
    flat = [x for row in J for x in row]
    coords = list(prolonged.space.coordinates)
    rng = np.random.default_rng(seed)
    pts = sample_points(coords, 10 * n_points, rng, box=box, complex_mode=complex_mode)
    vals = evaluate_batch(flat, coords, pts)
    vals = vals[np.all(np.isfinite(vals), axis=1)][:n_points]
    ranks = []
    for row in vals:
        Jv = row.reshape(len(coords), r)
        s = np.linalg.svd(Jv, compute_uv=False)
        ranks.append(int(np.sum(s > 1e-9 * max(1.0, s[0]))))
    max_rank = max(ranks, default=0)
    free = bool(ranks) and all(k == r for k in ranks)
    advice = "" if free else (f"orbits have dimension at most {max_rank} < {r}; "
                              "prolong to a higher jet order")
    return FreedomDiagnosis(free, r, max_rank, ranks, advice)
