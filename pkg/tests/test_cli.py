import io
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from twoscale.cli import format_eigenvalues, main, read_gain_sets

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"
BUCK = str(SCENARIOS / "buck_reference.txt")


def run(argv):
    out = io.StringIO()
    status = main(argv, out)
    return status, out.getvalue()


def section(text, title):
    lines = text.splitlines()
    start = lines.index(title) + 1
    block = []
    for line in lines[start:]:
        if not line.startswith("  "):
            break
        block.append(line.strip())
    return block


# ---------------------------------------------------------------------------
# formatting


def test_format_eigenvalues_pairs_and_order():
    eigs = [-500 + 670.82j, -30.2, -500 - 670.82j, -2037.33]
    assert format_eigenvalues(eigs) == ["-30.2", "-500±670.82j", "-2037.33"]


def test_format_eigenvalues_round_trips_at_six_digits():
    eigs = np.array([-384.737 + 2076.35j, -384.737 - 2076.35j, -30.2017])
    text = format_eigenvalues(eigs)
    re, im = text[1].rstrip("j").split("±")
    assert complex(float(re), float(im)) == pytest.approx(eigs[0], rel=1e-6)


def test_read_gain_sets():
    rows = read_gain_sets("# comment\nfast = 1, 2, 3, 4\n5,6,7,8\n")
    assert rows == [("fast", (1.0, 2.0, 3.0, 4.0)), ("set-2", (5.0, 6.0, 7.0, 8.0))]


# ---------------------------------------------------------------------------
# analyze


def test_analyze_reference_buck(capsys):
    status, text = run(["analyze", BUCK])
    assert status == 0
    assert "-500±670.82j" in section(text, "reduced slow and fast eigenvalues:")
    assert "gap ratio: 1.25837" in text
    assert "error bound estimate: 0.00142857" in text
    assert "approximate (input matrix is 2x1, tall)" in text
    assert capsys.readouterr().err == ""


def test_analyze_second_gain_set():
    status, text = run(["analyze", BUCK, "--gains", "0.7,574,3,4500"])
    assert status == 0
    no_sc = section(text, "eigenvalues without conditioning:")
    pairs = [complex(float(a), float(b)) for a, b in (s.rstrip("j").split("±") for s in no_sc)]
    for expected in (-1000 + 2670j, -544 + 570j):
        assert min(abs(p - expected) for p in pairs) <= max(0.01 * abs(expected), 1.0)


def test_analyze_linear_plant():
    status, text = run(["analyze", str(SCENARIOS / "linear_2x2.txt"), "--plant", "linear"])
    assert status == 0 and "n_x=2 n_z=2 m=1" in text


def test_analyze_missing_key(tmp_path, capsys):
    path = tmp_path / "p.txt"
    path.write_text("\n".join(l for l in Path(BUCK).read_text().splitlines() if not l.startswith("ki-i")))
    status, _ = run(["analyze", str(path)])
    err = capsys.readouterr().err
    assert status == 2
    assert err.startswith("error:") and "'ki-i'" in err and err.count("\n") == 1


def test_analyze_bad_gains_and_bad_line(tmp_path, capsys):
    assert run(["analyze", BUCK, "--gains", "1,2,3"])[0] == 2
    path = tmp_path / "p.txt"
    path.write_text(Path(BUCK).read_text() + "\nkp-v\n")
    assert run(["analyze", str(path)])[0] == 2
    assert "line" in capsys.readouterr().err


def test_analyze_model_error_exits_one(tmp_path, capsys):
    path = tmp_path / "p.txt"
    path.write_text(Path(BUCK).read_text().replace("ki-i = 700", "ki-i = 0"))
    status, _ = run(["analyze", str(path)])
    err = capsys.readouterr().err
    assert status == 1 and err.startswith("error: Singular")


# ---------------------------------------------------------------------------
# simulate


def test_simulate_writes_csv(tmp_path):
    out = tmp_path / "run.csv"
    status, text = run(["simulate", str(SCENARIOS / "buck_step.txt"), "--out", str(out)])
    assert status == 0 and "ise:" in text
    lines = out.read_bytes().split(b"\n")
    assert lines[0] == b"t,v_c,zeta_vc,i_l,zeta_il,v,residual_norm,slow_deriv_norm"
    assert lines[-1] == b"" and b"\r" not in out.read_bytes()
    data = np.loadtxt(out, delimiter=",", skiprows=1)
    assert data.shape == (20001, 8)
    assert np.all(np.diff(data[:, 0]) > 0)


def test_simulate_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        assert run(["simulate", str(SCENARIOS / "buck_step.txt"), "--mode", "approx", "--out", str(path)])[0] == 0
    assert a.read_bytes() == b.read_bytes()


def test_simulate_csv_round_trips_full_precision(tmp_path):
    out = tmp_path / "run.csv"
    run(["simulate", str(SCENARIOS / "linear_step.txt"), "--out", str(out)])
    from twoscale.simkit import integrate, load_scenario

    traj = integrate(load_scenario(SCENARIOS / "linear_step.txt"))
    data = np.loadtxt(out, delimiter=",", skiprows=1)
    np.testing.assert_array_equal(data[:, 1:5], traj.states)


def test_simulate_modes_report_metrics():
    ise = {}
    settle = {}
    for mode in ("none", "approx"):
        status, text = run(["simulate", str(SCENARIOS / "buck_step.txt"), "--mode", mode, "--out", "/dev/null"])
        assert status == 0
        fields = dict(line.split(": ", 1) for line in text.splitlines()[1:])
        ise[mode] = float(fields["ise"])
        settle[mode] = float(fields["settling time (2%)"].split()[0])
    # conditioning settles the step faster on this loop
    assert settle["approx"] < settle["none"]
    assert ise["none"] > 0 and ise["approx"] > 0


def test_simulate_horizon_zero(tmp_path):
    scenario = tmp_path / "s.txt"
    scenario.write_text(f"plant = buck\nparams-file = {BUCK}\nhorizon = 0\ndt = 5e-6\n")
    out = tmp_path / "o.csv"
    assert run(["simulate", str(scenario), "--out", str(out)])[0] == 0
    rows = out.read_text().splitlines()
    assert len(rows) == 2
    assert float(rows[1].split(",")[1]) == pytest.approx(50.0)


def test_simulate_to_stdout(capsys):
    status, text = run(["simulate", str(SCENARIOS / "linear_step.txt")])
    assert status == 0 and text.startswith("t,x1,x2,z1,z2,v1,")
    assert "ise:" in capsys.readouterr().err


def test_simulate_pmsm_zero_bus(tmp_path, capsys):
    text = (SCENARIOS / "pmsm_load_step.txt").read_text().replace("initial-state = equilibrium", "initial-state = 0,0,0,0,0,0")
    scenario = tmp_path / "s.txt"
    scenario.write_text(text)
    status, _ = run(["simulate", str(scenario)])
    err = capsys.readouterr().err
    assert status == 1 and err.startswith("error: NonPhysicalState") and err.count("\n") == 1


def test_simulate_wrong_mode_for_plant(capsys):
    status, _ = run(["simulate", str(SCENARIOS / "buck_step.txt"), "--mode", "exact"])
    assert status == 1 and "ModeShapeMismatch" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# sweep


def test_sweep_three_gain_sets(capsys):
    status, text = run(["sweep", BUCK, "--tests", str(SCENARIOS / "buck_gain_sets.txt")])
    assert status == 0
    rows = [line.split("\t") for line in text.splitlines()[1:]]
    assert [r[0] for r in rows] == ["test-1", "test-2", "test-3"]
    gaps = [float(r[4]) for r in rows]
    disp = [float(r[5]) for r in rows]
    assert gaps == sorted(gaps) and disp == sorted(disp, reverse=True)
    printed = [complex(float(a), float(b)) for a, b in (s.rstrip("j").split("±") for s in rows[0][2].split())]
    for expected in (-474 + 2433j, -579 + 532j):
        assert min(abs(p - expected) for p in printed) <= max(0.01 * abs(expected), 1.0)


def test_sweep_single_set_matches_analyze(tmp_path):
    tests = tmp_path / "t.txt"
    tests.write_text("only = 1, 30, 1, 700\n")
    _, sweep = run(["sweep", BUCK, "--tests", str(tests)])
    _, analyze = run(["analyze", BUCK])
    row = sweep.splitlines()[1].split("\t")
    assert row[2].split() == section(analyze, "eigenvalues without conditioning:")
    assert row[3].split() == section(analyze, "eigenvalues with conditioning:")
    assert f"gap ratio: {row[4]}" in analyze


def test_sweep_continues_after_bad_row(tmp_path, capsys):
    tests = tmp_path / "t.txt"
    tests.write_text("bad = 1, 30, 1, 0\ngood = 1, 30, 1, 700\n")
    status, text = run(["sweep", BUCK, "--tests", str(tests)])
    err = capsys.readouterr().err
    assert status == 1 and err.startswith("error: bad:")
    assert text.splitlines()[2].startswith("good\t") and "failed" not in text.splitlines()[2]


def test_usage_errors(capsys):
    assert run([])[0] == 2
    assert run(["frobnicate"])[0] == 2
    assert run(["sweep", BUCK])[0] == 2
    assert run(["analyze", "/no/such/file"])[0] == 2
    for line in capsys.readouterr().err.splitlines():
        assert line.startswith("error:")


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "twoscale", "analyze", BUCK], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("plant: buck")
