"""Command line interface: ``congruent <subcommand> PROBLEM [options]``."""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .checks import run_selftest
from .coframe import coframe_text
from .congruence import GridDomainError, RegularityError, decide_congruence
from .expr import ExprError, to_text
from .frame import CrossSectionError, InconsistentCrossSectionError, UnsolvableNormalizationError
from .group import NotACoframeError, RankDeficientError
from .pipeline import PipelineResult, prolonged_to_dict, run_pipeline
from .problem import Problem, ProblemError, load_immersion, load_problem

EXIT_OK = 0
EXIT_NOT_CONGRUENT = 1
EXIT_INCONCLUSIVE = 2
EXIT_USAGE = 64
EXIT_DATA = 65
EXIT_INTERNAL = 70

_DATA_ERRORS = (CrossSectionError, UnsolvableNormalizationError, InconsistentCrossSectionError, NotACoframeError,
                RankDeficientError, GridDomainError, RegularityError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, order: bool = True) -> None:
    p.add_argument("problem", help="problem file, or the name of a shipped problem (se2, mobius, so3, heisenberg)")
    if order:
        p.add_argument("--order", type=int, help="jet order (default: the problem's)")
    p.add_argument("--seed", type=int, help="random seed (default: the problem's, else 0)")
    p.add_argument("--tol", type=float, help="tolerance (check: relative congruence tolerance)")
    p.add_argument("--box", help="sampling box as LOW,HIGH for every variable")
    p.add_argument("--output", "-o", help="write the report here instead of stdout")
    p.add_argument("--format", choices=("text", "machine"), default="text")
    p.add_argument("--timings", action="store_true",
                   help="include wall-clock times in machine output (breaks byte-for-byte reproducibility)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="congruent", description=(
        "Moving frames, invariant coframes and congruence invariants for Lie group actions on jet spaces."))
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _common(sub.add_parser("prolong", help="print the prolonged action"))
    _common(sub.add_parser("frame", help="solve the normalisation equations and check the frame"))
    _common(sub.add_parser("coframe", help="build the invariant coframe and its structure constants"))
    _common(sub.add_parser("invariants", help="extract the complete system of congruence invariants"))
    c = sub.add_parser("check", help="decide local congruence of two immersions")
    _common(c)
    c.add_argument("immersion1")
    c.add_argument("immersion2")
    c.add_argument("--x0", required=True, help="base point, comma separated (complex values like 0.1+0.2j)")
    c.add_argument("--half-width", type=float, help="comparison grid half-width (default 0.1)")
    _common(sub.add_parser("selftest", help="run every property suite for one problem"))
    return ap


def _box(text: str):
    try:
        lo, hi = (float(x) for x in text.split(","))
    except ValueError:
        raise ProblemError("--box", "expected LOW,HIGH") from None
    if not lo < hi:
        raise ProblemError("--box", "LOW must be below HIGH")
    return (lo, hi)


def _configure(args) -> Problem:
    problem = load_problem(args.problem)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.box:
        changes["box"] = _box(args.box)
    if getattr(args, "order", None) is not None:
        if args.order < 0:
            raise ProblemError("--order", "must be non-negative")
        changes["order"] = args.order
    return replace(problem, **changes) if changes else problem


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"not serialisable: {type(o).__name__}")


def _structure_dict(res: PipelineResult) -> dict:
    st = res.structure
    nz = []
    C = st.rounded(10)
    for idx in zip(*np.nonzero(C)):
        i, j, k = (int(x) for x in idx)
        if j < k:
            v = complex(C[i, j, k])
            nz.append({"i": i + 1, "j": j + 1, "k": k + 1,
                       "value": v.real if v.imag == 0 else [v.real, v.imag]})
    return {"constant": st.constant, "summary": st.summary(), "nonzero": nz,
            "max_deviation": st.deviation}


def _report(res: PipelineResult, stage: str, timings: bool) -> dict:
    p = res.problem
    doc: dict = {"problem": p.name, "field": p.field, "order": res.space.order,
                 "coordinates": list(res.space.coordinates), "stage": stage}
    if stage == "prolong":
        doc["prolonged_action"] = prolonged_to_dict(res.prolonged)
    if res.frame is not None:
        doc["frame"] = res.frame.to_dict()
        doc["frame_check"] = res.frame_report.to_dict()
    if res.invariantization is not None:
        doc["invariantization"] = {c: to_text(e) for c, e in res.invariantization.items()}
    if res.coframe is not None:
        doc["coframe"] = res.coframe.to_dict()
        doc["maurer_cartan_entries"] = [list(e) for e in res.mc_entries]
        doc["structure"] = _structure_dict(res)
    if res.invariants is not None:
        doc["invariants"] = res.invariants.to_dict()
    if timings:
        doc["timings"] = res.timings
    return doc


def _text(res: PipelineResult, stage: str) -> str:
    lines = [f"# {res.problem.name}: J^{res.space.order} with coordinates {', '.join(res.space.coordinates)}"]
    if stage == "prolong":
        for c, e in prolonged_to_dict(res.prolonged).items():
            lines.append(f"{c}' = {e}")
        return "\n".join(lines) + "\n"
    fr = res.frame
    lines.append("moving frame" + (" (override)" if fr.source == "override" else "") + ":")
    d = fr.to_dict()
    if fr.is_matrix:
        lines.extend("  [" + ", ".join(row) + "]" for row in d["matrix"])
    else:
        lines.extend(f"  {t} = {e}" for t, e in d["params"].items())
    rep = res.frame_report
    lines.append(f"frame check: {'PASS' if rep.passed else 'FAIL'} (equivariance residual "
                 f"{rep.equivariance:.2e})")
    lines.extend(f"  {m}" for m in rep.messages)
    if not rep.passed:
        return "\n".join(lines) + "\n"
    if stage == "frame":
        lines.append("invariantization:")
        lines.extend(f"  iota*{c} = {to_text(e)}" for c, e in res.invariantization.items())
        return "\n".join(lines) + "\n"
    lines.append("coframe:")
    lines.extend("  " + ln for ln in coframe_text(res.coframe).splitlines())
    lines.append(f"structure: {res.structure.summary()}")
    if stage == "coframe":
        return "\n".join(lines) + "\n"
    inv = res.invariants
    lines.append(f"invariants (k = {inv.k}, max order {inv.max_order}):")
    for e in inv.entries:
        tag = "constant" if e.constant else f"order {e.order}"
        lines.append(f"  [{e.label} / d{inv.space.base[e.base]}] ({tag}) {to_text(e.expr)}")
    return "\n".join(lines) + "\n"


def _emit(text: str, args) -> None:
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)


def _parse_x0(text: str, problem: Problem) -> list:
    try:
        parts = [complex(s.strip().replace("i", "j")) if problem.complex_mode else float(s)
                 for s in text.split(",")]
    except ValueError:
        raise ProblemError("--x0", f"cannot parse base point {text!r}") from None
    if len(parts) != len(problem.base):
        raise ProblemError("--x0", f"expected {len(problem.base)} components")
    return parts


def _cmd_stage(args, stage: str) -> int:
    problem = _configure(args)
    res = run_pipeline(problem, until=stage)
    if args.format == "machine":
        _emit(_dump(_report(res, stage, args.timings)), args)
    else:
        _emit(_text(res, stage), args)
    if res.frame_report is not None and not res.frame_report.passed:
        return EXIT_DATA
    return EXIT_OK


def _cmd_check(args) -> int:
    problem = _configure(args)
    psi1 = load_immersion(args.immersion1, problem)
    psi2 = load_immersion(args.immersion2, problem)
    x0 = _parse_x0(args.x0, problem)
    res = run_pipeline(problem)
    if not res.frame_report.passed:
        print("congruent: moving frame failed verification: " + "; ".join(res.frame_report.messages),
              file=sys.stderr)
        return EXIT_DATA
    tol = args.tol if args.tol is not None else problem.tolerances["congruence"]
    hw = args.half_width if args.half_width is not None else problem.half_width
    verdict = decide_congruence(res.prolonged, res.invariants, psi1, psi2, x0, tol=tol,
                                half_width=hw, seed=problem.seed, complex_mode=problem.complex_mode,
                                constant_structure=res.constant_structure)
    if args.format == "machine":
        doc = {"problem": problem.name, "verdict": verdict.to_dict()}
        _emit(_dump(doc), args)
    else:
        _emit(verdict.to_text() + "\n", args)
    return verdict.exit_code


def _cmd_selftest(args) -> int:
    problem = _configure(args)
    res = run_pipeline(problem)
    suites = run_selftest(res, seed=problem.seed)
    ok = all(s.passed for s in suites)
    if args.format == "machine":
        doc = _report(res, "selftest", args.timings)
        doc["selftest"] = {"passed": ok, "seed": problem.seed, "suites": [s.to_dict() for s in suites]}
        _emit(_dump(doc), args)
    else:
        lines = [s.line() for s in suites] + [f"selftest {'PASSED' if ok else 'FAILED'} (seed {problem.seed})"]
        _emit("\n".join(lines) + "\n", args)
    return EXIT_OK if ok else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "check":
            return _cmd_check(args)
        if args.command == "selftest":
            return _cmd_selftest(args)
        return _cmd_stage(args, args.command)
    except (ProblemError, ExprError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"congruent: input error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _DATA_ERRORS as exc:
        print(f"congruent: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception:  # noqa: BLE001
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
