import os

import numpy as np
import pytest

from borninfeld import cli
from borninfeld import io
from borninfeld import radial_oracle as ro
from borninfeld.config import parse_config
from borninfeld.density import to_radial
from borninfeld.suite import point_charge_test

DENSITY = """
[density]
norms = 4

[density.1]
kind = gaussian
sigma = 0.5
weight = 2.0
"""


def write(tmp_path, body, name="run.ini"):
    path = tmp_path / name
    path.write_text(body)
    return str(path)


def minimize_config(tmp_path, audits="l2_identity, tail_bound", extra=""):
    return write(tmp_path, """
[grid]
half_width = 2.0
cells = 16
%s
[solver]
method = minimize
%s
[audits]
list = %s

[output]
directory = out
""" % (DENSITY, extra, audits))


def test_radial_command(tmp_path):
    cfg = write(tmp_path, DENSITY + "\n[solver]\nmethod = radial\nradial_max = 5\nradial_points = 11\n"
                "[output]\ndirectory = out\n")
    assert cli.main(["solve", cfg]) == cli.EXIT_OK
    header, rows = io.read_csv(tmp_path / "out" / "radial.csv")
    assert header == ["r", "u", "du", "nu", "flux"]
    assert len(rows) == 10
    assert rows[-1][0] == 5.0
    # outside the charge the flux is the total charge with reversed sign
    assert rows[-1][4] == pytest.approx(-2.0, rel=1e-8)
    assert cli.main(["radial", cfg]) == cli.EXIT_OK


def test_minimize_report_has_audits(tmp_path):
    cfg = minimize_config(tmp_path)
    assert cli.main(["solve", cfg]) == cli.EXIT_OK
    out = tmp_path / "out"
    report = (out / "report.txt").read_text()
    assert "l2_identity" in report and "tail_bound" in report
    assert "converged = true" in report
    header, rows = io.read_csv(out / "audits.csv")
    assert header == ["name", "lhs", "rhs", "ratio", "passed", "tol"]
    for f in ("field.bifield", "slices.csv"):
        assert (out / f).exists()
    u, grid = io.load_field(out / "field.bifield")
    assert grid.cells == 16 and grid.half_width == 2.0


def test_invalid_solver_is_config_error(tmp_path, capsys):
    cfg = write(tmp_path, "[solver]\nmethod = gauss_seidel\n")
    assert cli.main(["solve", cfg]) == cli.EXIT_CONFIG
    err = capsys.readouterr().err
    assert "line 2" in err
    assert "minimize, fixed_point, continuation, radial" in err


def test_nonconvergence_exit(tmp_path):
    cfg = minimize_config(tmp_path, extra="max_iterations = 1")
    assert cli.main(["solve", cfg]) == cli.EXIT_NONCONVERGED


def test_audit_failure_exit(tmp_path):
    # zero boundary data on a charged problem: the decay slope is far from -(n - 2)
    cfg = minimize_config(tmp_path, audits="decay", extra="boundary = zero")
    assert cli.main(["solve", cfg, "--set", "audits.decay_inner=1.0"]) == cli.EXIT_AUDIT


def test_overrides_and_output_flag(tmp_path):
    cfg = minimize_config(tmp_path)
    other = tmp_path / "elsewhere"
    assert cli.main(["solve", cfg, "-o", str(other), "--set", "grid.cells=12"]) == cli.EXIT_OK
    assert "cells = 12" in (other / "report.txt").read_text()
    assert cli.main(["solve", cfg, "--set", "grid.nope=1"]) == cli.EXIT_CONFIG


def test_determinism(tmp_path):
    cfg = minimize_config(tmp_path, audits="l2_identity, holder")
    outputs = []
    for name in ("a", "b"):
        assert cli.main(["solve", cfg, "-o", str(tmp_path / name)]) == cli.EXIT_OK
        outputs.append([(tmp_path / name / f).read_bytes() for f in ("audits.csv", "slices.csv", "field.bifield")])
    assert outputs[0] == outputs[1]


def test_verify_roundtrip(tmp_path):
    cfg = minimize_config(tmp_path)
    assert cli.main(["solve", cfg]) == cli.EXIT_OK
    vcfg = minimize_config(tmp_path, audits="l2_identity, energy_identity").replace(".ini", ".ini")
    text = open(vcfg).read() + "field_input = out/field.bifield\n"
    path = write(tmp_path, text.replace("directory = out", "directory = verify"), "verify.ini")
    assert cli.main(["verify", path]) == cli.EXIT_OK
    assert "energy_identity" in (tmp_path / "verify" / "audits.csv").read_text()
    assert not (tmp_path / "verify" / "field.bifield").exists()


def test_verify_needs_field(tmp_path):
    assert cli.main(["verify", minimize_config(tmp_path)]) == cli.EXIT_CONFIG


def test_fixed_point_log_written(tmp_path):
    cfg = minimize_config(tmp_path, extra="").replace(".ini", ".ini")
    assert cli.main(["solve", cfg, "--set", "solver.method=fixed_point"]) == cli.EXIT_OK
    lines = (tmp_path / "out" / "iterations.log").read_text().splitlines()
    assert lines[0].startswith("iter 1 ")
    assert "nondivergence_residual" in (tmp_path / "out" / "report.txt").read_text()


def test_continuation_stability_audit(tmp_path):
    cfg = minimize_config(tmp_path, audits="stability", extra="schedule = 0.5, 1.0")
    assert cli.main(["solve", cfg, "--set", "solver.method=continuation"]) == cli.EXIT_OK
    header, rows = io.read_csv(tmp_path / "out" / "audits.csv")
    assert len(rows) == 1 and rows[0][4] is True


def test_stability_without_stages_fails(tmp_path):
    cfg = minimize_config(tmp_path, audits="stability")
    assert cli.main(["solve", cfg]) == cli.EXIT_AUDIT


def test_sweep(tmp_path):
    cfg = write(tmp_path, """
[grid]
half_width = 4.0
[density]
[density.1]
kind = gaussian
sigma = 0.5
weight = 2.0
[solver]
method = minimize
[sweep]
cells = 16, 32
r_inner = 1.5
r_outer = 3.0
[output]
directory = out
""")
    assert cli.main(["sweep", cfg]) == cli.EXIT_OK
    header, rows = io.read_csv(tmp_path / "out" / "sweep.csv")
    assert header == ["cells", "h", "error", "ratio", "iterations", "converged"]
    assert [r[0] for r in rows] == [16, 32]
    assert rows[1][2] < rows[0][2]
    assert 3.0 < rows[1][3] < 5.0


def test_radial_command_rejects_offset_density(tmp_path):
    cfg = write(tmp_path, "[density.1]\nkind = gaussian\ncenter = 1, 0, 0\nsigma = 1\nweight = 1\n"
                "[solver]\nmethod = radial\n[output]\ndirectory = out\n")
    assert cli.main(["solve", cfg]) == cli.EXIT_CONFIG


def test_mollification_trends_to_barrier():
    # solutions at sigma and sigma/2 are closer to each other than sigma is to the point charge
    r = np.linspace(0.5, 3.0, 26)
    W = ro.barrier_w(1.0, 0.0, 3, np.inf)
    barrier = np.array([ro.barrier_w(1.0, 0.0, 3, x) for x in r]) - W
    vals = {}
    for s in (0.4, 0.2):
        sol = ro.RadialSolution(to_radial(point_charge_test(sigma=s)))
        vals[s] = sol.value(r)
    gap = np.abs(vals[0.4] - barrier).max()
    assert np.abs(vals[0.4] - vals[0.2]).max() < gap
    assert np.abs(vals[0.2] - barrier).max() < gap


def test_run_rejects_unknown_command():
    from borninfeld.errors import ConfigError
    with pytest.raises(ConfigError):
        cli.run(parse_config(""), "plot")
