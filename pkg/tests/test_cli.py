import json
import subprocess
import sys

import pytest

from tvamplan import io as aio
from tvamplan.cli import main

SMALL = ["--nx", "32", "--n-angles", "32"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def artifact_files(d):
    return sorted(p.name for p in d.iterdir() if p.name != "config.json")


def assert_same_outputs(a, b):
    names = artifact_files(a)
    assert names == artifact_files(b)
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes(), n


def test_plan_writes_five_outputs(tmp_path, capsys):
    out = tmp_path / "p"
    code, stdout, _ = run(capsys, "plan", "--geometry", "disk", "--method", "ospw", "--w", "0",
                          "--tau-lower", "0.70", "--tau-upper", "0.90", "--iters", "60",
                          *SMALL, "--out", out)
    assert code == 0
    data = [p for p in artifact_files(out) if not p.endswith(".json")]
    assert sorted(data) == ["dose.f32", "histogram.csv", "history.csv", "metrics.csv", "plan.f32"]
    assert (out / "config.json").exists()
    assert stdout.count("\n") == 1 and "PW=" in stdout and "IPDR=" in stdout
    hist = aio.load(out / "history.csv")
    assert hist[0][0] == 0 and hist[-1][0] == 60


def test_plan_rejects_bad_threshold_order(tmp_path, capsys):
    code, _, err = run(capsys, "plan", "--tau-lower", "0.9", "--tau-upper", "0.7",
                       "--out", tmp_path)
    assert code == 2
    assert "tau_lower < tau_upper" in err


def test_plan_aggregates_config_errors(tmp_path, capsys):
    code, _, err = run(capsys, "plan", "--nx", "4", "--alpha", "70", "--w", "-1",
                       "--out", tmp_path)
    assert code == 2
    assert "nx" in err and "alpha" in err and "w must be" in err


def test_plan_osmo_collapse_exit_code(tmp_path, capsys):
    code, _, err = run(capsys, "plan", "--method", "osmo", "--tau-lower", "0.04",
                       "--tau-upper", "0.08", "--iters", "200", *SMALL, "--out", tmp_path)
    assert code == 3
    assert "collapsed" in err and "iteration" in err


def test_plan_replay_is_bit_identical(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(capsys, "plan", "--geometry", "gyroid", "--nz", "4", "--iters", "20",
               "--workers", "2", *SMALL, "--out", a)[0] == 0
    assert run(capsys, "plan", "--config", a / "config.json", "--out", b)[0] == 0
    assert_same_outputs(a, b)
    rows = aio.load(a / "metrics.csv")
    assert len(rows) == 5 and rows[0]["slice"] is None and rows[1]["slice"] == 0


def test_flags_override_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"nx": 32, "n_angles": 32, "iters": 10, "tau_lower": 0.5}))
    out = tmp_path / "o"
    assert run(capsys, "plan", "--config", cfg, "--tau-lower", "0.6", "--out", out)[0] == 0
    resolved = json.loads((out / "config.json").read_text())
    assert resolved["tau_lower"] == 0.6 and resolved["iters"] == 10 and resolved["nx"] == 32


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"nx": 32, "bogus": 1}))
    code, _, err = run(capsys, "plan", "--config", cfg, "--out", tmp_path / "o")
    assert code == 2 and "bogus" in err


def test_sweep_custom_grid_and_replay(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    code, stdout, _ = run(capsys, "sweep", "--grid", "0.2,0.4,0.6", "--iters", "20",
                          "--workers", "2", "--chunk", "1", "--png", "true", *SMALL, "--out", a)
    assert code == 0
    grid = aio.load(a / "sweep.csv")
    assert len(grid.records) == 3
    for m in ("pw", "ipdr", "ver"):
        assert (a / f"{m}.csv").exists() and (a / f"{m}.png").exists()
    summary = json.loads((a / "summary.json").read_text())
    assert summary["optimal_pair"] is not None and summary["n_records"] == 3
    assert run(capsys, "sweep", "--config", a / "config.json", "--out", b)[0] == 0
    assert_same_outputs(a, b)


def test_sweep_exclude_overdose_flag(tmp_path, capsys):
    out = tmp_path / "s"
    assert run(capsys, "sweep", "--method", "l2n", "--grid", "0.5,1.0", "--iters", "60",
               "--exclude-overdose=false", *SMALL, "--out", out)[0] == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["exclude_overdose"] is False
    assert summary["optimal_pair"] == [0.5, 1.0]


def test_compare_two_rows_shared_geometry(tmp_path, capsys):
    out = tmp_path / "c"
    code, stdout, _ = run(capsys, "compare", "--iters", "40", *SMALL, "--set-b", "method=osmo",
                          "--out", out)
    assert code == 0
    rows = aio.load(out / "compare.csv")
    assert len(rows) == 2
    assert rows[0]["geometry"] == rows[1]["geometry"]
    assert rows[0]["method"] == "OSPW(w=0)" and rows[1]["method"] == "OSMO"
    assert (rows[1]["tau_lower"], rows[1]["tau_upper"]) == (0.85, 0.9)
    replay = tmp_path / "r"
    assert run(capsys, "compare", "--config", out / "config.json", "--out", replay)[0] == 0
    assert_same_outputs(out, replay)


def test_compare_identical_configs(tmp_path, capsys):
    out = tmp_path / "c"
    assert run(capsys, "compare", "--iters", "30", *SMALL, "--out", out)[0] == 0
    rows = aio.load(out / "compare.csv")
    assert rows[0] == rows[1]


def test_compare_refuses_different_nx(tmp_path, capsys):
    code, _, err = run(capsys, "compare", *SMALL, "--set-b", "nx=40", "--out", tmp_path)
    assert code == 2 and "nx" in err


def test_metrics_from_saved_dose(tmp_path, capsys):
    p = tmp_path / "p"
    run(capsys, "plan", "--iters", "30", *SMALL, "--out", p)
    m = tmp_path / "m"
    code, stdout, _ = run(capsys, "metrics", "--dose", p / "dose.f32", *SMALL, "--alpha", "0.025",
                          "--out", m)
    assert code == 0
    rows = aio.load(m / "metrics.csv")
    assert rows[0]["alpha"] == 0.025 and rows[0]["method"] == "OSPW(w=0)"
    m2 = tmp_path / "m2"
    assert run(capsys, "metrics", "--config", m / "config.json", "--dose", p / "dose.f32",
               "--out", m2)[0] == 0
    assert_same_outputs(m, m2)


def test_metrics_missing_file_is_io_error(tmp_path, capsys):
    code, _, err = run(capsys, "metrics", "--dose", tmp_path / "nope.f32", *SMALL,
                       "--out", tmp_path)
    assert code == 4


def test_gen_geometry_and_reload(tmp_path, capsys):
    out = tmp_path / "g"
    code, stdout, _ = run(capsys, "gen-geometry", "--geometry", "dogbones", "--nx", "64",
                          "--png", "true", "--out", out)
    assert code == 0 and "digest=" in stdout
    assert (out / "geometry.png").exists()
    p = tmp_path / "p"
    assert run(capsys, "plan", "--geometry", "file", "--geometry-path", out / "geometry.u8",
               "--n-angles", "32", "--iters", "10", "--out", p)[0] == 0
    replay = tmp_path / "g2"
    assert run(capsys, "gen-geometry", "--config", out / "config.json", "--out", replay)[0] == 0
    assert_same_outputs(out, replay)


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "tvamplan", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip()
