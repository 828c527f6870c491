import csv
import json
import os

import pytest

from s2cubic import cli
from s2cubic.fixture import default_fixture, read_fixture


def run(*argv):
    return cli.main([str(a) for a in argv])


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_parse_tau():
    assert cli.parse_tau("0.5T", 2.0) == 1.0
    assert cli.parse_tau("T", 2.0) == 2.0
    assert cli.parse_tau("0.25", 2.0) == 0.25
    with pytest.raises(cli.UsageError):
        cli.parse_tau("half", 2.0)


def test_parse_list():
    assert cli.parse_list("a, b,") == ["a", "b"]
    with pytest.raises(cli.UsageError):
        cli.parse_list(" , ")


def test_find_T(tmp_path):
    assert run("find-T", "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "find_T.json").read_text())
    assert rep["pass"] and rep["difference"] <= 1e-4
    written = read_fixture(tmp_path / "T_fixture.json")
    assert written.hash == default_fixture().hash
    assert written.T == default_fixture().T


def test_find_T_coarse(tmp_path):
    assert run("find-T", "--out", tmp_path, "--tol", "1e-2") == 0
    assert abs(read_fixture(tmp_path / "T_fixture.json").T - default_fixture().T) <= 1e-2


def test_find_T_bad_tol(tmp_path):
    assert run("find-T", "--out", tmp_path, "--tol", "0") == 2


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_read_only_out(tmp_path):
    ro = tmp_path / "ro"
    ro.mkdir()
    ro.chmod(0o500)
    try:
        assert run("find-T", "--out", ro) == 2
    finally:
        ro.chmod(0o700)


def test_out_under_file(tmp_path):
    f = tmp_path / "plain"
    f.write_text("x")
    assert run("find-T", "--out", f / "sub") == 2


def test_phase_portrait(tmp_path):
    assert run("phase-portrait", "--out", tmp_path) == 0
    fp = json.loads((tmp_path / "fixed_points.json").read_text())
    assert len(fp["fixed_points"]) == 4
    assert len(list(tmp_path.glob("separatrix_*.csv"))) == 4
    assert len(rows(tmp_path / "orbit_tau_0.50T.csv")) > 10


def test_phase_portrait_longer(tmp_path):
    assert run("phase-portrait", "--out", tmp_path / "a", "--qmax", 50) == 0
    assert run("phase-portrait", "--out", tmp_path / "b", "--qmax", 100) == 0
    a = json.loads((tmp_path / "a" / "phase_portrait.json").read_text())
    b = json.loads((tmp_path / "b" / "phase_portrait.json").read_text())
    qa = max(float(r["q"]) for r in rows(tmp_path / "a" / "separatrix_low_stable_pos.csv"))
    qb = max(float(r["q"]) for r in rows(tmp_path / "b" / "separatrix_low_stable_pos.csv"))
    assert qb > qa
    assert b["T_fixture_difference"] <= 1e-4 and a["T_fixture_difference"] <= 1e-4


def test_phase_portrait_bad_branch(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run("phase-portrait", "--out", tmp_path, "--branch", "sideways")
    assert exc.value.code == 2


def test_solve_psi(tmp_path):
    assert run("solve-psi", "--out", tmp_path, "--tau", "0") == 0
    data = rows(tmp_path / "psi.csv")
    assert list(data[0]) == ["y", "psi", "psi1", "psi2", "P", "m"]
    rep = json.loads((tmp_path / "psi.json").read_text())
    assert rep["b_bounds"]["low"] == pytest.approx(-1.0, abs=1e-8)


def test_solve_psi_beyond_T(tmp_path):
    assert run("solve-psi", "--out", tmp_path, "--tau", "2") == 2


def test_build_metric(tmp_path):
    assert run("build-metric", "--out", tmp_path, "--family", "B", "--tau", "0.5T", "--b", "1.0") == 0
    rep = json.loads((tmp_path / "metric.json").read_text())
    assert rep["lambda_scan"]["positive"] and rep["admissible"]
    assert abs(rep["b_bounds"]["high"] - rep["b_bounds"]["high_phi"]) <= 1e-4
    assert all(p["smooth"] for p in rep["poles"])


def test_build_metric_needs_b(tmp_path):
    assert run("build-metric", "--out", tmp_path, "--family", "B") == 2


def test_verify_family_a(tmp_path):
    assert run("verify", "--out", tmp_path, "--family", "A", "--seeds", 3, "--horizon", 5) == 0
    rep = json.loads((tmp_path / "verify.json").read_text())
    names = {c["name"] for c in rep["checks"]}
    assert {"lambda_positive", "bracket_geodesic", "bracket_conservative", "conservation_drift",
            "pole_r", "pole_rt", "eqpde"} <= names
    assert rep["pass"] and rep["fixture"]["hash"] == default_fixture().hash


def test_verify_inside_band(tmp_path):
    assert run("verify", "--out", tmp_path, "--family", "B", "--b", "-1.0", "--seeds", 1) == 1
    rep = json.loads((tmp_path / "verify.json").read_text())
    assert rep["failure"] == "metric_degeneracy" and not rep["pass"]


def test_verify_gc(tmp_path):
    assert run("verify", "--out", tmp_path, "--family", "GC", "--seeds", 2, "--horizon", 2) == 0
    rep = json.loads((tmp_path / "verify.json").read_text())
    assert rep["gc_match"]["fit"]["residual"] <= 1e-3


def test_verify_deterministic(tmp_path):
    args = ["verify", "--family", "B", "--b", "1.0", "--seeds", 2, "--horizon", 3]
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b") == 0
    assert (tmp_path / "a" / "verify.json").read_bytes() == (tmp_path / "b" / "verify.json").read_bytes()


def test_sweep(tmp_path):
    assert run("sweep", "--out", tmp_path, "--seeds", 0) == 0
    data = rows(tmp_path / "sweep.csv")
    assert len(data) == 9
    assert [float(r["tau_over_T"]) for r in data] == sorted(float(r["tau_over_T"]) for r in data)
    assert all(r["status"] == "ok" and float(r["bounds_diff"]) <= 1e-4 for r in data)


def test_sweep_zero_row(tmp_path):
    assert run("sweep", "--out", tmp_path, "--taus", "0", "--seeds", 0) == 0
    (row,) = rows(tmp_path / "sweep.csv")
    assert float(row["b_low"]) == pytest.approx(-1.0, abs=1e-8)
    assert float(row["b_high"]) == pytest.approx(-1.0, abs=1e-8)


def test_sweep_parallel_matches(tmp_path):
    args = ["sweep", "--taus", "0.2T,0.6T", "--bs", "1.0,-3.0", "--seeds", 0]
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b", "--workers", 2) == 0
    assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()
    assert len(rows(tmp_path / "a" / "sweep.csv")) == 4


def test_sweep_empty_grid(tmp_path):
    assert run("sweep", "--out", tmp_path, "--taus", ",") == 2


def test_gc_match(tmp_path):
    assert run("gc-match", "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "gc_match.json").read_text())
    assert rep["pass"] and rep["pullback_residual"] <= 1e-9
    assert len(rows(tmp_path / "gc_profiles.csv")) == 241


def test_tampered_fixture(tmp_path):
    payload = json.loads(json.dumps(default_fixture().as_dict()))
    payload["T"] = 0.6
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(payload))
    assert run("solve-psi", "--out", tmp_path / "o", "--fixture", bad) == 2


def test_pinned_fixture(tmp_path):
    assert run("find-T", "--out", tmp_path / "fx") == 0
    pinned = tmp_path / "fx" / "T_fixture.json"
    assert run("solve-psi", "--out", tmp_path / "o", "--fixture", pinned, "--tau", "0.5T") == 0
    rep = json.loads((tmp_path / "o" / "psi.json").read_text())
    assert rep["fixture"]["hash"] == read_fixture(pinned).hash


def test_read_only_filesystem():
    assert run("find-T", "--out", "/proc/s2cubic-out") == 2
