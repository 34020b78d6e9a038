"""prolong -> frame -> coframe -> invariants, with per-stage artifacts."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import sympy as sp

from .coframe import CoframeField, build_coframe, pull_matrix_mc, pull_maurer_cartan
from .congruence import InvariantSystem, extract_invariants
from .expr import to_text
from .forms import OneForm
from .frame import FrameReport, MovingFrame, invariantize, solve_normalization, verify_frame
from .group import MaurerCartanBasis, StructureReport, maurer_cartan, structure_constants_of
from .jet import JetSpace, ProlongedAction, prolong_action
from .problem import Problem

STAGES = ("prolong", "frame", "coframe", "invariants")


@dataclass
class PipelineResult:
    problem: Problem
    space: JetSpace
    prolonged: ProlongedAction
    frame: MovingFrame | None = None
    frame_report: FrameReport | None = None
    invariantization: dict[str, sp.Expr] | None = None
    basis: MaurerCartanBasis | None = None
    mc_forms: list[OneForm] | None = None
    mc_entries: tuple[tuple[int, int], ...] = ()
    coframe: CoframeField | None = None
    structure: StructureReport | None = None
    invariants: InvariantSystem | None = None
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def constant_structure(self) -> bool:
        return self.structure is None or self.structure.constant


def run_pipeline(problem: Problem, *, order: int | None = None, seed: int | None = None,
                 until: str = "invariants") -> PipelineResult:
    """Run the stages up to and including ``until``.

    A frame that fails verification ends the run after the frame stage;
    check ``frame_report.passed`` before using later artifacts.
    """
    if until not in STAGES:
        raise ValueError(f"unknown stage {until!r}")
    stop = STAGES.index(until)
    seed = problem.seed if seed is None else seed
    box = problem.box
    cm = problem.complex_mode
    space = problem.space(order)
    action = problem.action

    t0 = time.perf_counter()
    prolonged = prolong_action(action, space)
    res = PipelineResult(problem, space, prolonged)
    res.timings["prolong"] = time.perf_counter() - t0
    if stop < 1:
        return res

    t0 = time.perf_counter()
    cs = problem.cross_section
    if problem.frame_override is not None:
        frame = problem.frame_override
    else:
        frame = solve_normalization(prolonged, cs, seed=seed, box=box, complex_mode=cm,
                                    tol=problem.tolerances["equal"])
    res.frame = frame
    res.frame_report = verify_frame(frame, prolonged, cs, action, seed=seed, box=box,
                                    tol=problem.tolerances["frame"],
                                    group_spread=problem.group_spread)
    if not res.frame_report.passed:
        # later stages would only restate the failure less clearly
        res.timings["frame"] = time.perf_counter() - t0
        return res
    res.invariantization = invariantize(prolonged, frame, cs, action, seed=seed, box=box,
                                        tol=problem.tolerances["equal"])
    res.timings["frame"] = time.perf_counter() - t0
    if stop < 2:
        return res

    t0 = time.perf_counter()
    if frame.is_matrix:
        mmc = pull_matrix_mc(frame, space, action.r, seed=seed, box=box, complex_mode=cm)
        res.mc_forms = mmc.forms
        res.mc_entries = mmc.entries
    else:
        if action.matrix is None:
            raise ValueError("a matrix representation is needed for the Maurer-Cartan forms")
        res.basis = maurer_cartan(action.matrix, action.identity, entries=problem.mc_entries)
        res.mc_entries = res.basis.entries
        res.mc_forms = pull_maurer_cartan(res.basis, frame, space)
    labels = [f"rho*mu^{j + 1}" for j in range(len(res.mc_forms))]
    res.coframe = build_coframe(res.invariantization, res.mc_forms, space, cs, mc_labels=labels,
                                seed=seed, box=box, complex_mode=cm)
    res.structure = structure_constants_of(res.coframe.forms, space.coordinates, seed=seed,
                                           box=box, complex_mode=cm,
                                           tol=problem.tolerances["frame"])
    res.timings["coframe"] = time.perf_counter() - t0
    if stop < 3:
        return res

    t0 = time.perf_counter()
    res.invariants = extract_invariants(res.coframe, space, seed=seed, box=box, complex_mode=cm)
    res.timings["invariants"] = time.perf_counter() - t0
    return res


def prolonged_to_dict(p: ProlongedAction) -> dict[str, str]:
    return {c: to_text(p[c]) for c in p.space.coordinates}
