import json
import subprocess
import sys
import time
from pathlib import Path

import pytest

from congruent.cli import main
from congruent.problem import resolve_problem_path

SAMPLES = Path(__file__).resolve().parents[1] / "samples"


def cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_prolong_prints_transforms(capsys):
    code, out, _ = cli(capsys, "prolong", "se2")
    assert code == 0
    assert "u_x' = u_x*cos(theta) - v_x*sin(theta)" in out


def test_prolong_order_zero_has_fiber_transforms_only(capsys):
    code, out, _ = cli(capsys, "prolong", "se2", "--order", "0")
    assert code == 0
    primed = [ln.split("'")[0] for ln in out.splitlines() if "' = " in ln]
    assert primed == ["x", "u", "v"]
    assert "x' = x" in out


def test_cross_section_needs_higher_order(capsys):
    code, _, err = cli(capsys, "frame", "se2", "--order", "0")
    assert code == 65 and "u_x" in err


def test_invalid_cross_section_count(tmp_path, capsys):
    text = resolve_problem_path("se2").read_text().replace('u_x = "0"', "")
    bad = tmp_path / "bad.problem"
    bad.write_text(text)
    code, _, err = cli(capsys, "frame", str(bad))
    assert code == 64 and "cross_section" in err


def test_missing_problem_file(capsys):
    code, _, err = cli(capsys, "frame", "/nonexistent/x.problem")
    assert code == 64 and "input error" in err


def test_unknown_subcommand(capsys):
    with pytest.raises(SystemExit) as info:
        main(["bogus"])
    assert info.value.code == 64


def test_se2_invariants(capsys):
    code, out, _ = cli(capsys, "invariants", "se2")
    assert code == 0
    assert "(u_x*u_xx + v_x*v_xx)/sqrt(u_x^2 + v_x^2)" in out
    assert "(-u_x*v_xx + u_xx*v_x)/(u_x^2 + v_x^2)" in out
    assert "max order 2" in out


def test_mobius_invariants_text(capsys):
    code, out, _ = cli(capsys, "invariants", "mobius")
    assert code == 0 and "(2*z_w*z_www - 3*z_ww^2)/(4*z_w^2)" in out


def test_heisenberg_invariants_machine(capsys):
    code, out, _ = cli(capsys, "invariants", "heisenberg", "--format", "machine")
    assert code == 0
    doc = json.loads(out)
    assert doc["invariants"]["max_order"] == 2
    assert len(doc["coframe"]) == 11
    assert doc["structure"]["constant"]


def test_coframe_machine_lists_structure(capsys):
    code, out, _ = cli(capsys, "coframe", "se2", "--format", "machine")
    doc = json.loads(out)
    assert code == 0 and doc["structure"]["constant"] and doc["maurer_cartan_entries"] == [[2, 1], [1, 3], [2, 3]]
    assert "invariants" not in doc


@pytest.mark.parametrize("other,code", [("rotated_circle.imm", 0), ("ellipse.imm", 1)])
def test_check_exit_codes(capsys, other, code):
    got, out, _ = cli(capsys, "check", "se2", str(SAMPLES / "circle.imm"), str(SAMPLES / other), "--x0", "0.3")
    assert got == code
    assert out.startswith("decision: " + ("CONGRUENT" if code == 0 else "NOT-CONGRUENT"))


def test_check_machine_witness(capsys):
    code, out, _ = cli(capsys, "check", "se2", str(SAMPLES / "circle.imm"), str(SAMPLES / "rotated_circle.imm"),
                       "--x0", "0.3", "--format", "machine")
    w = json.loads(out)["verdict"]["witness"]
    assert code == 0
    assert abs(w["theta"] - 0.7) < 1e-6 and abs(w["a"] - 1) < 1e-6 and abs(w["b"] + 2) < 1e-6


def test_check_malformed_immersion(capsys):
    code, _, err = cli(capsys, "check", "se2", str(SAMPLES / "circle.imm"), str(SAMPLES / "malformed.imm"),
                       "--x0", "0.3")
    assert code == 64 and "input error" in err


def test_check_bad_x0(capsys):
    code, _, _ = cli(capsys, "check", "se2", str(SAMPLES / "circle.imm"), str(SAMPLES / "circle.imm"),
                     "--x0", "0.3,1")
    assert code == 64


def test_check_complex_mobius(capsys):
    code, _, _ = cli(capsys, "check", "mobius", str(SAMPLES / "mobius_cubic.imm"),
                     str(SAMPLES / "mobius_cubic_moved.imm"), "--x0", "0.5+0.1j")
    assert code == 0


def test_selftest_se2(capsys):
    code, out, _ = cli(capsys, "selftest", "se2", "--seed", "42")
    assert code == 0 and out.strip().endswith("selftest PASSED (seed 42)")
    assert "FAIL" not in out


def test_selftest_so3_includes_antisymmetry(capsys):
    code, out, _ = cli(capsys, "selftest", "so3")
    assert code == 0 and "antisymmetr" in out


def test_corrupted_frame_fails_selftest(tmp_path, capsys):
    text = resolve_problem_path("se2").read_text() + """
[frame_override]
params = { theta = "atan2(u_x, v_x)", a = "-(v*u_x - u*v_x)/sqrt(u_x^2 + v_x^2)", b = "(-u*u_x - v*v_x)/sqrt(u_x^2 + v_x^2)" }
"""
    bad = tmp_path / "corrupt.problem"
    bad.write_text(text)
    code, out, _ = cli(capsys, "selftest", str(bad))
    assert code == 1
    assert "FAIL frame normalisation and equivariance of rho" in out
    assert "residual for u" in out and "selftest FAILED" in out
    code, _, err = cli(capsys, "invariants", str(bad))
    assert code == 65


def test_output_file(tmp_path, capsys):
    dest = tmp_path / "out.json"
    code, out, _ = cli(capsys, "invariants", "se2", "--format", "machine", "--output", str(dest))
    assert code == 0 and out == ""
    assert json.loads(dest.read_text())["problem"] == "se2"


def test_machine_output_is_deterministic(capsys):
    _, a, _ = cli(capsys, "invariants", "heisenberg", "--format", "machine")
    _, b, _ = cli(capsys, "invariants", "heisenberg", "--format", "machine")
    assert a == b


def test_timings_only_on_request(capsys):
    _, out, _ = cli(capsys, "frame", "se2", "--format", "machine", "--timings")
    assert "timings" in json.loads(out)


@pytest.mark.parametrize("name", ["se2", "mobius", "heisenberg", "so3"])
def test_console_script_runtime(name):
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "congruent.cli", "invariants", name, "--format", "machine"],
                          capture_output=True, text=True, timeout=120)
    elapsed = time.perf_counter() - t0
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["problem"] == name
    assert elapsed < 60
