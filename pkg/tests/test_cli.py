import csv
import json
import subprocess
import sys

import pytest

from gridstate.cli import bundled, main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_loadflow_listing(tmp_path, capsys):
    code, out, _ = run(capsys, "loadflow", "--report-nodes", "--out", str(tmp_path))
    assert code == 0
    data = json.loads(out)
    assert [r["location"] for r in data["phasors"]] == ["Subst", "SM-70", "SM-109", "SM-134", "JB-42", "JB-44", "JB-106"]
    assert data["phasors"][0]["voltage"] == "406.60+0.00i"
    state = json.loads((tmp_path / "true_state.json").read_text())
    assert len(state["state"]) == 63
    assert (tmp_path / "true_state.csv").exists()


def test_loadflow_intervals_give_sigma_theta(tmp_path, capsys):
    code, out, _ = run(capsys, "loadflow", "--loads", str(bundled("loads_day.csv")), "--slack-voltage", "406.6",
                       "--interval", "12:00", "--out", str(tmp_path))
    assert code == 0
    data = json.loads(out)
    assert data["scenarios"] == 96 and data["label"] == "12:00"
    assert json.loads((tmp_path / "sigma_theta.json").read_text())["sigma_theta"] == pytest.approx(0.00168, abs=1e-5)


def test_no_load_flat(tmp_path, capsys):
    p = tmp_path / "empty.json"
    p.write_text(json.dumps({"slack_voltage": 400.0, "loads": []}))
    code, _, _ = run(capsys, "loadflow", "--loads", str(p), "--out", str(tmp_path))
    assert code == 0
    recs = json.loads((tmp_path / "true_state.json").read_text())["state"]
    assert all(r["re"] == 400.0 and r["im"] == 0.0 for r in recs if r["kind"] == "voltage")


def test_malformed_json_exit_2(tmp_path, capsys):
    p = tmp_path / "grid.json"
    p.write_text('{\n  "nodes": [,]\n}')
    code, out, err = run(capsys, "loadflow", "--grid", str(p), "--out", str(tmp_path))
    assert code == 2 and out == ""
    assert f"{p}:2:" in err


def test_missing_file_exit_2(tmp_path, capsys):
    code, _, err = run(capsys, "assess", "--grid", str(tmp_path / "nope.json"), "--out", str(tmp_path))
    assert code == 2 and "no such file" in err


def test_estimate_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(capsys, "estimate", "--model", "pmu", "--seed", "1", "--out", str(a))[0] == 0
    assert run(capsys, "estimate", "--model", "pmu", "--seed", "1", "--out", str(b))[0] == 0
    for name in ("estimate.json", "estimate.csv", "measurements.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_seed_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("GRIDSTATE_SEED", "7")
    code, out, _ = run(capsys, "estimate", "--model", "pmu", "--out", str(tmp_path))
    assert code == 0 and json.loads(out)["seed"] == 7


def test_em_estimate_covers_unmeasured_junctions(tmp_path, capsys):
    assert run(capsys, "estimate", "--model", "em", "--out", str(tmp_path))[0] == 0
    recs = json.loads((tmp_path / "estimate.json").read_text())["estimates"]
    assert len(recs) == 63
    ids = {r["id"] for r in recs if r["kind"] == "voltage"}
    assert {"JB-42", "JB-44", "JB-106"} <= ids


def test_alpha_widens_ellipses(tmp_path, capsys):
    for lvl in ("0.95", "0.99"):
        assert run(capsys, "estimate", "--alpha", lvl, "--seed", "2", "--out", str(tmp_path / lvl))[0] == 0
    e95 = json.loads((tmp_path / "0.95" / "estimate.json").read_text())["estimates"]
    e99 = json.loads((tmp_path / "0.99" / "estimate.json").read_text())["estimates"]
    assert all(b["ellipse"]["a"] > a["ellipse"]["a"] for a, b in zip(e95, e99))


def test_field_mode(tmp_path, capsys):
    assert run(capsys, "estimate", "--model", "em", "--seed", "3", "--out", str(tmp_path / "sim"))[0] == 0
    raw = tmp_path / "sim" / "raw_measurements.csv"
    code, out, _ = run(capsys, "estimate", "--model", "em", "--raw", str(raw), "--out", str(tmp_path / "field"))
    assert code == 0 and json.loads(out)["mode"] == "field"
    code, _, err = run(capsys, "estimate", "--model", "pmu", "--raw", str(raw), "--out", str(tmp_path / "x"))
    assert code == 2


def test_assess_report(tmp_path, capsys):
    code, out, _ = run(capsys, "assess", "--model", "pmu", "--reps", "2000", "--report-nodes", "--workers", "2",
                       "--out", str(tmp_path))
    assert code == 0
    data = json.loads(out)
    assert 0.93 < data["avg_voltage_hr"] < 0.97 and 0.93 < data["avg_current_hr"] < 0.97
    assert len(data["report"]) == 14
    assert (tmp_path / "hit_rates.csv").exists() and (tmp_path / "hit_rates.json").exists()


def test_assess_multiplier_degrades_em(tmp_path, capsys):
    _, base, _ = run(capsys, "assess", "--model", "em", "--reps", "2000", "--out", str(tmp_path / "a"))
    _, worse, _ = run(capsys, "assess", "--model", "em", "--reps", "2000", "--mult-sigma-phi", "10",
                      "--out", str(tmp_path / "b"))
    assert json.loads(worse)["avg_voltage_hr"] < json.loads(base)["avg_voltage_hr"] - 0.05


def test_reps_zero_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["assess", "--reps", "0"])
    assert exc.value.code == 2


def test_sweep_rows(tmp_path, capsys):
    code, _, _ = run(capsys, "sweep", "--sweep", "sigma_u", "--from", "1", "--to", "4", "--steps", "7",
                     "--out", str(tmp_path))
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "sweep.csv")))
    assert len(rows) == 7 * 7 * 2
    assert {r["param"] for r in rows} == {"sigma_u"}


def test_non_identifiable_exit_1(tmp_path, capsys):
    sc = tmp_path / "scenario.json"
    sc.write_text(json.dumps({"measured_nodes": ["SM-70"], "measured_edges": []}))
    code, _, err = run(capsys, "estimate", "--model", "pmu", "--scenario", str(sc), "--out", str(tmp_path))
    assert code == 1 and "rcond" in err


def test_console_script_subprocess(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "gridstate.cli", "assess", "--reps", "0"], capture_output=True)
    assert proc.returncode == 2 and b"--reps" in proc.stderr
    proc = subprocess.run([sys.executable, "-m", "gridstate.cli", "estimate", "--model", "pmu", "--out",
                           str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0
    json.loads(proc.stdout)
