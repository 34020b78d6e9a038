"""Problem and immersion files.

Both are TOML documents with expressions written as strings in the syntax
accepted by :func:`congruent.expr.parse`.  The grammar is documented in
``docs/file-format.md``.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import sympy as sp

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .congruence import ImmersionSpec
from .expr import ExprError, VarTable, parse
from .frame import CrossSection, MovingFrame
from .group import ActionSpec, MatrixRep
from .jet import JetSpace


class ProblemError(ValueError):
    """Malformed or inconsistent input; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


DEFAULT_TOLERANCES = {"equal": 1e-9, "frame": 1e-8, "invariance": 1e-8, "congruence": 1e-6}


@dataclass
class Problem:
    name: str
    base: tuple[str, ...]
    fiber: tuple[str, ...]
    action: ActionSpec
    order: int
    cross_section: CrossSection
    frame_override: MovingFrame | None = None
    mc_entries: tuple[tuple[int, int], ...] | None = None
    tolerances: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    box: Any = (-2.0, 2.0)
    seed: int = 0
    group_spread: float = 0.5
    half_width: float = 0.1
    source: str = ""

    @property
    def field(self) -> str:
        return self.action.field

    @property
    def complex_mode(self) -> bool:
        return self.action.complex_mode

    def space(self, order: int | None = None) -> JetSpace:
        return JetSpace(self.base, self.fiber, self.order if order is None else order)


def _get(doc: Mapping, key: str, path: str, kind=None, default=...):
    if key not in doc:
        if default is ...:
            raise ProblemError(f"{path}.{key}".lstrip("."), "missing required field")
        return default
    v = doc[key]
    if kind is not None and not isinstance(v, kind):
        raise ProblemError(f"{path}.{key}".lstrip("."), f"expected {getattr(kind, '__name__', kind)}")
    return v


def _expr(text, vt: VarTable, path: str) -> sp.Expr:
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        text = str(text)
    if not isinstance(text, str):
        raise ProblemError(path, "expected an expression string")
    try:
        return parse(text, vt)
    except ExprError as exc:
        raise ProblemError(path, str(exc)) from exc


def _names(v, path: str) -> tuple[str, ...]:
    if not isinstance(v, list) or not all(isinstance(x, str) for x in v):
        raise ProblemError(path, "expected a list of names")
    return tuple(v)


def _box(v, path: str):
    if isinstance(v, list):
        if len(v) != 2:
            raise ProblemError(path, "box must be [low, high]")
        return (float(v[0]), float(v[1]))
    if isinstance(v, dict):
        out = {}
        default = (-2.0, 2.0)
        for k, b in v.items():
            if k == "default":
                default = _box(b, f"{path}.default")
            else:
                out[k] = _box(b, f"{path}.{k}")
        return _DefaultBox(out, default)
    raise ProblemError(path, "box must be [low, high] or a table of them")


class _DefaultBox(dict):
    """Per-variable boxes with a fallback for unnamed variables."""

    def __init__(self, boxes, default):
        super().__init__(boxes)
        self.default = default

    def get(self, key, default=None):
        return super().get(key, self.default)


def load_problem_text(text: str, source: str = "<string>") -> Problem:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ProblemError("<file>", f"TOML syntax error: {exc}") from exc
    return problem_from_dict(doc, source)


def problem_from_dict(doc: Mapping, source: str = "") -> Problem:
    name = str(doc.get("name", Path(source).stem if source else "problem"))
    fld = _get(doc, "field", "", str, "real")
    if fld not in ("real", "complex"):
        raise ProblemError("field", "must be 'real' or 'complex'")
    order = _get(doc, "order", "", int)
    if order < 0:
        raise ProblemError("order", "must be non-negative")
    coords = _get(doc, "coordinates", "", dict)
    base = _names(_get(coords, "base", "coordinates"), "coordinates.base")
    fiber = _names(_get(coords, "fiber", "coordinates"), "coordinates.fiber")
    try:
        space = JetSpace(base, fiber, order)
    except ValueError as exc:
        raise ProblemError("coordinates", str(exc)) from exc

    grp = _get(doc, "group", "", dict)
    params = _names(_get(grp, "parameters", "group"), "group.parameters")
    vt = space.var_table(params)
    ident_raw = _get(grp, "identity", "group", list)
    if len(ident_raw) != len(params):
        raise ProblemError("group.identity", f"expected {len(params)} values, got {len(ident_raw)}")
    identity = tuple(_expr(v, VarTable(), f"group.identity[{i}]") for i, v in enumerate(ident_raw))
    act = _get(grp, "action", "group", dict)
    if set(act) != set(fiber):
        raise ProblemError("group.action", f"need exactly one transform per fiber coordinate {list(fiber)}")
    act_vt = VarTable()
    act_vt.extend(fiber, "fiber")
    act_vt.extend(params, "group-param")
    transforms = tuple((u, _expr(act[u], act_vt, f"group.action.{u}")) for u in fiber)

    rep = None
    mc_entries = None
    if "matrix" in grp:
        m = _get(grp, "matrix", "group", dict)
        rows = _get(m, "rows", "group.matrix", list)
        pvt = VarTable()
        pvt.extend(params, "group-param")
        mrows = tuple(tuple(_expr(x, pvt, f"group.matrix.rows[{i}][{j}]") for j, x in enumerate(row))
                      for i, row in enumerate(rows))
        try:
            rep = MatrixRep(mrows, params, _get(m, "kind", "group.matrix", str, "affine"))
        except ValueError as exc:
            raise ProblemError("group.matrix", str(exc)) from exc
        if "maurer_cartan_entries" in m:
            mc_entries = tuple((int(a), int(b)) for a, b in m["maurer_cartan_entries"])
    action = ActionSpec(params, identity, transforms, rep, fld)
    try:
        action.check_identity()
    except ValueError as exc:
        raise ProblemError("group.identity", str(exc)) from exc

    cs_doc = _get(doc, "cross_section", "", dict)
    entries = []
    for k, v in cs_doc.items():
        if k not in space.coordinates:
            raise ProblemError(f"cross_section.{k}", "not a coordinate of the jet space")
        val = _expr(v, VarTable(), f"cross_section.{k}")
        if not val.is_Rational:
            raise ProblemError(f"cross_section.{k}", "normalisation values must be rational constants")
        entries.append((k, val))
    cs = CrossSection(tuple(entries))

    override = None
    if "frame_override" in doc:
        override = _frame_override(doc["frame_override"], space, params)
    if override is None or not override.is_matrix:
        if len(cs) != len(params):
            raise ProblemError("cross_section", f"{len(cs)} entries for {len(params)} group parameters")

    tol = dict(DEFAULT_TOLERANCES)
    for k, v in doc.get("tolerances", {}).items():
        if k not in tol:
            raise ProblemError(f"tolerances.{k}", "unknown tolerance")
        tol[k] = float(v)
    samp = doc.get("sampling", {})
    box = _box(samp["box"], "sampling.box") if "box" in samp else (-2.0, 2.0)
    return Problem(name, base, fiber, action, order, cs, override, mc_entries, tol, box,
                   int(samp.get("seed", 0)), float(samp.get("group_spread", 0.5)),
                   float(doc.get("congruence", {}).get("half_width", 0.1)), source)


def _frame_override(doc, space: JetSpace, params) -> MovingFrame:
    if not isinstance(doc, dict):
        raise ProblemError("frame_override", "expected a table")
    vt = space.var_table()
    aux: dict[sp.Symbol, sp.Expr] = {}
    for k, v in doc.get("define", {}).items():
        e = _expr(v, vt, f"frame_override.define.{k}").xreplace(aux)
        try:
            vt.add(k, "auxiliary")
        except ValueError as exc:
            raise ProblemError(f"frame_override.define.{k}", str(exc)) from exc
        aux[sp.Symbol(k)] = e
    if ("params" in doc) == ("matrix" in doc):
        raise ProblemError("frame_override", "give exactly one of 'params' or 'matrix'")
    if "params" in doc:
        p = doc["params"]
        if set(p) != set(params):
            raise ProblemError("frame_override.params", f"need an expression for each of {list(params)}")
        return MovingFrame(tuple((t, _expr(p[t], vt, f"frame_override.params.{t}").xreplace(aux))
                                 for t in params), source="override")
    rows = doc["matrix"]
    mat = [[_expr(x, vt, f"frame_override.matrix[{i}][{j}]").xreplace(aux) for j, x in enumerate(row)]
           for i, row in enumerate(rows)]
    if not mat or any(len(r) != len(mat) for r in mat):
        raise ProblemError("frame_override.matrix", "must be square")
    return MovingFrame(matrix=sp.ImmutableMatrix(mat), source="override")


def problem_dir():
    return resources.files("congruent") / "problems"


def resolve_problem_path(name: str | Path) -> Path:
    """A file path, or the stem of a shipped problem such as ``se2``."""
    p = Path(name)
    if p.exists():
        return p
    shipped = problem_dir() / (p.name if p.suffix == ".problem" else f"{p.name}.problem")
    if shipped.is_file():
        return Path(str(shipped))
    raise FileNotFoundError(f"no problem file {name}")


def load_problem(name: str | Path) -> Problem:
    path = resolve_problem_path(name)
    return load_problem_text(path.read_text(), str(path))


def shipped_problems() -> list[str]:
    return sorted(p.name[:-8] for p in problem_dir().iterdir() if p.name.endswith(".problem"))


def load_immersion_text(text: str, problem: Problem, source: str = "<string>") -> ImmersionSpec:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ProblemError("<file>", f"TOML syntax error: {exc}") from exc
    if ("immersion" in doc) == ("sampled" in doc):
        raise ProblemError("<file>", "give exactly one of [immersion] or [sampled]")
    vt = VarTable()
    vt.extend(problem.base, "base")
    if "immersion" in doc:
        sec = doc["immersion"]
        if not isinstance(sec, dict) or set(sec) != set(problem.fiber):
            raise ProblemError("immersion", f"need one expression per fiber coordinate {list(problem.fiber)}")
        return ImmersionSpec.symbolic(problem.base, {u: _expr(sec[u], vt, f"immersion.{u}")
                                                     for u in problem.fiber})
    sec = doc["sampled"]
    if problem.complex_mode:
        raise ProblemError("sampled", "sampled immersions are supported for real problems only")
    axes = []
    for x in problem.base:
        axes.append(_get(sec, x, "sampled", list))
    values = {}
    for u in problem.fiber:
        values[u] = _get(sec, u, "sampled", list)
    try:
        return ImmersionSpec.sampled(problem.base, axes, values,
                                     int(sec.get("degree", 6)), int(sec.get("window", 9)))
    except (ValueError, TypeError) as exc:
        raise ProblemError("sampled", str(exc)) from exc


def load_immersion(path: str | Path, problem: Problem) -> ImmersionSpec:
    path = Path(path)
    return load_immersion_text(path.read_text(), problem, str(path))
