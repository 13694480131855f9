import json
import subprocess
import sys

import numpy as np
import pytest

from kawaguchi.cli import InputError, main, parse_model_file
from kawaguchi.models import reference_solution
from kawaguchi.surface import read_surface, write_surface

WAVE_MODEL = """\
# realified complex scalar, massless
[dimensions]
N = 3
n = 1

[coordinates]
t x u v

[K]
(d[1,2]^2 + d[1,3]^2 - d[0,2]^2 - d[0,3]^2) / d[0,1]

[vector time]
0: 1

[vector phase]
2: -v
3: u
"""


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def wave_files(tmp_path):
    model = tmp_path / "wave.kaw"
    model.write_text(WAVE_MODEL)
    surf = tmp_path / "wave.csv"
    write_surface(reference_solution("scalar_wave", (12, 12)), surf)
    return str(model), str(surf)


def test_check_builtin_passes(capsys):
    code, out, _ = run(["check", "builtin:maxwell", "--samples", "20"], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["passed"] and rep["N"] == 7 and len(rep["killing"]) == 14


def test_check_inhomogeneous_model_fails(tmp_path, capsys):
    f = tmp_path / "sq.kaw"
    f.write_text("[dimensions]\nN = 3\nn = 1\n[K]\nd[0,1]^2\n")
    code, out, _ = run(["check", str(f)], capsys)
    assert code == 1
    assert json.loads(out)["homogeneity"]["passed"] is False
    code, _, _ = run(["check", str(f), "--allow-inhomogeneous"], capsys)
    assert code == 1  # the Euler identity still fails


def test_malformed_model_reports_location(tmp_path, capsys):
    f = tmp_path / "bad.kaw"
    f.write_text("[dimensions]\nN = 3\nn = 1\n[K]\nd[1,0]\n")
    code, _, err = run(["check", str(f)], capsys)
    assert code == 2
    assert "bad.kaw:5" in err and "strictly increasing" in err


@pytest.mark.parametrize("text, fragment", [
    ("[K]\nd[0,1]\n", "content before|must set"),
    ("[dimensions]\nN = 3\nn = 1\n", "missing \\[K\\]"),
    ("[dimensions]\nN = 3\nn = 1\n[bogus]\n[K]\nd[0,1]\n", "unknown section"),
    ("[dimensions]\nN = 3\nn = 1\n[coordinates]\nt x\n[K]\nd[0,1]\n", "coordinate names"),
    ("[dimensions]\nN = x\nn = 1\n[K]\nd[0,1]\n", "bad number"),
])
def test_model_file_errors(text, fragment):
    with pytest.raises(InputError, match=fragment):
        parse_model_file(text, "m.kaw")


def test_missing_files_exit_2(tmp_path, capsys, wave_files):
    model, surf = wave_files
    assert run(["check", str(tmp_path / "none.kaw")], capsys)[0] == 2
    assert run(["action", model, str(tmp_path / "none.csv")], capsys)[0] == 2
    assert run(["check", "builtin:nope"], capsys)[0] == 2


def test_dimension_mismatch_exit_2(capsys, wave_files):
    _, surf = wave_files
    code, _, err = run(["action", "builtin:maxwell", surf], capsys)
    assert code == 2 and "model needs" in err


def test_action_and_residual(tmp_path, capsys, wave_files):
    model, surf = wave_files
    code, out, _ = run(["action", model, surf], capsys)
    assert code == 0 and abs(json.loads(out)["action"]) < 0.5
    cells = tmp_path / "cells.csv"
    code, out, _ = run(["residual", model, surf, "--cells", str(cells), "--report", str(tmp_path / "r.json")], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["method"] == "staggered" and rep["norms"]["max"] < 0.5
    assert json.loads((tmp_path / "r.json").read_text()) == rep
    table = np.loadtxt(cells, delimiter=",", skiprows=1)
    assert table.shape == (10 * 10, 2 + 4)
    code, out, _ = run(["residual", model, surf, "--expanded"], capsys)
    assert code == 0 and json.loads(out)["method"] == "expanded"


def test_noether_from_model_file(tmp_path, capsys, wave_files):
    model, surf = wave_files
    faces = tmp_path / "faces.csv"
    code, out, _ = run(["noether", model, surf, "--vector", "phase", "--faces", str(faces)], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["killing"]["passed"] and rep["divergence"]["max"] < 1e-9
    assert set(rep["coefficients"]) == {"0", "1"}
    assert np.loadtxt(faces, delimiter=",", skiprows=1).shape[1] == 4
    assert run(["noether", model, surf, "--vector", "boost"], capsys)[0] == 2


def test_solve_recovers_wave(tmp_path, capsys):
    S = reference_solution("scalar_wave", (12, 12))
    vals = S.values.copy()
    vals[2:, 1:-1, 1:-1] += 0.05 * np.random.default_rng(0).uniform(-1, 1, vals[2:, 1:-1, 1:-1].shape)
    write_surface(S.with_values(vals), tmp_path / "noisy.csv")
    out_csv = tmp_path / "solved.csv"
    code, out, _ = run(["solve", "builtin:complex_scalar", str(tmp_path / "noisy.csv"), "--out", str(out_csv)], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["converged"] and rep["grid"]["free_components"] == [2, 3]
    assert np.max(np.abs(read_surface(out_csv).values - S.values)) < 0.05


def test_solve_divergence_exit_3(tmp_path, capsys):
    S = reference_solution("scalar_wave", (12, 12), upper=(1, 1))
    vals = S.values.copy()
    vals[2:, 1:-1, 1:-1] += 0.1 * np.random.default_rng(0).uniform(-1, 1, vals[2:, 1:-1, 1:-1].shape)
    write_surface(S.with_values(vals), tmp_path / "square.csv")
    code, out, _ = run(["solve", "builtin:complex_scalar", str(tmp_path / "square.csv")], capsys)
    assert code == 3
    assert json.loads(out)["converged"] is False


def test_models_listing_and_reference_round_trip(tmp_path, capsys):
    code, out, _ = run(["models"], capsys)
    rep = json.loads(out)
    assert code == 0 and "maxwell" in rep["models"] and "scalar_two_waves" in rep["reference_solutions"]
    csv = tmp_path / "ref.csv"
    code, out, _ = run(["models", "--reference", "scalar_wave", "--grid", "6,8", "--out", str(csv)], capsys)
    assert code == 0 and json.loads(out)["reference"] == "scalar_wave"
    assert np.array_equal(read_surface(csv).values, reference_solution("scalar_wave", (6, 8)).values)
    assert run(["models", "--reference", "soliton", "--out", str(csv)], capsys)[0] == 2
    assert run(["models", "--reference", "scalar_wave"], capsys)[0] == 2


def test_thread_count_does_not_change_output(capsys, wave_files):
    model, surf = wave_files
    outs = [run(["--threads", str(t), "residual", model, surf], capsys)[1] for t in (1, 3)]
    assert outs[0] == outs[1]


def test_param_override(capsys, tmp_path):
    write_surface(reference_solution("scalar_constant", (4, 4)), tmp_path / "c.csv")
    a = json.loads(run(["action", "builtin:complex_scalar", str(tmp_path / "c.csv"),
                        "--param", "V=m2*rho", "--param", "m2=2"], capsys)[1])["action"]
    assert a == pytest.approx(-2.0, rel=1e-12)
    assert run(["action", "builtin:complex_scalar", str(tmp_path / "c.csv"), "--param", "m2"], capsys)[0] == 2


def test_console_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "kawaguchi", "check", "builtin:nambu_goto", "--samples", "10"],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0 and json.loads(proc.stdout)["passed"]
