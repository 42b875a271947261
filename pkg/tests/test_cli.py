import csv
import json
import subprocess
import sys

import pytest

from lqg_mfg.cli import main

TINY = {"N_schedule": [8, 16, 32, 64], "replications": 50, "bootstrap": 200}


def write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def run(tmp_path, cfg, *args, out="out"):
    path = write(tmp_path, cfg) if isinstance(cfg, dict) else cfg
    return main([args[0], "--config", str(path), "--out", str(tmp_path / out), *args[1:]])


def test_riccati_basic(tmp_path):
    assert run(tmp_path, {"seed": 1, "model": {"k": 1, "T": 1}}, "riccati") == 0
    rows = list(csv.DictReader((tmp_path / "out" / "riccati.csv").open()))
    assert rows[0].keys() == {"t", "a", "b", "c", "d"}
    assert float(rows[-1]["t"]) == 1.0 and float(rows[-1]["a"]) == 0.0
    manifest = json.loads((tmp_path / "out" / "manifest_riccati.json").read_text())
    assert manifest["schema_version"] == 1
    for name in manifest["outputs"]:
        assert (tmp_path / "out" / name).exists()


def test_riccati_pattern_report(tmp_path):
    cfg = {"seed": 1, "model": {"k": 1, "T": 1, "N": 5}, "riccati": {"steps": 512}}
    assert run(tmp_path, cfg, "riccati") == 0
    rep = json.loads((tmp_path / "out" / "pattern_report.json").read_text())
    assert rep["checks"]["pattern_max_deviation"]["value"] <= 1e-6
    assert rep["pass"] is True


def test_riccati_check_failure_exit(tmp_path):
    # a 64-step grid cannot meet the 1e-8 closed-form tolerance
    assert run(tmp_path, {"seed": 1, "riccati": {"steps": 64}}, "riccati") == 1
    rep = json.loads((tmp_path / "out" / "pattern_report.json").read_text())
    assert rep["checks"]["closed_form_vs_rk4"]["pass"] is False


def test_bad_k(tmp_path, capsys):
    assert run(tmp_path, {"seed": 1, "model": {"k": -1}}, "riccati") == 2
    err = capsys.readouterr().err
    assert "k" in err and "k>0" in err


@pytest.mark.parametrize("cfg,field", [
    ({"model": {"k": 1}}, "seed"),
    ({"seed": 1, "modle": {}}, "modle"),
    ({"seed": 1, "rates": {"replications": 5}}, "rates.replications"),
    ({"seed": 1, "model": {"initial_law": {"kind": "cauchy"}}}, "initial_law.kind"),
    ({"seed": 1, "schema_version": 7}, "schema_version"),
])
def test_config_diagnostics(tmp_path, capsys, cfg, field):
    code = run(tmp_path, cfg, "rates", "--experiment", "iid")
    assert code == 2
    assert field in capsys.readouterr().err


def test_malformed_json_reports_line(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{\n "seed": 1,\n "model": {"k": }\n}')
    assert run(tmp_path, path, "riccati") == 2
    assert "line 3" in capsys.readouterr().err


def test_unknown_selector(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        run(tmp_path, {"seed": 1}, "rates", "--experiment", "q9")
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_rates_iid_smoke(tmp_path):
    assert run(tmp_path, {"seed": 3, "rates": TINY}, "rates", "--experiment", "iid") == 0
    out = tmp_path / "out"
    for name in ("iid.csv", "iid_summary.json", "iid.svg", "manifest_rates_iid.json"):
        assert (out / name).exists()
    header = (out / "iid.csv").read_text().splitlines()[0]
    assert header == "experiment,p,t,N,replication,value"
    summary = json.loads((out / "iid_summary.json").read_text())
    slope = summary["estimates"][0]["slope"]
    assert f"{slope:.3f}" in (out / "iid.svg").read_text()


def test_rates_exit_codes_follow_bands(tmp_path):
    cfg = {"seed": 3, "rates": {**TINY, "p_list": [1.0]}}
    assert run(tmp_path, cfg, "rates", "--experiment", "iid") == 0
    est = json.loads((tmp_path / "out" / "iid_summary.json").read_text())["estimates"][0]
    inside_ci = (est["slope"] + est["ci95"][0]) / 2
    cfg["rates"]["bands"] = {"iid_d1": {"1": [None, inside_ci]}}
    assert run(tmp_path, cfg, "rates", "--experiment", "iid", out="o2") == 3
    cfg["rates"]["bands"] = {"iid_d1": {"1": [None, est["ci95"][0] - 0.5]}}
    assert run(tmp_path, cfg, "rates", "--experiment", "iid", out="o3") == 1


def test_seed_override_changes_output(tmp_path):
    cfg = {"seed": 3, "rates": TINY}
    run(tmp_path, cfg, "rates", "--experiment", "iid", out="a")
    run(tmp_path, cfg, "rates", "--experiment", "iid", "--seed", "4", out="b")
    assert (tmp_path / "a" / "iid.csv").read_bytes() != (tmp_path / "b" / "iid.csv").read_bytes()


def test_nash_check_default(tmp_path):
    cfg = {"seed": 2, "nash": {"replications": 1000, "steps": 100}}
    code = run(tmp_path, cfg, "nash-check")
    assert code in (0, 3)
    rep = json.loads((tmp_path / "out" / "nash_report.json").read_text())
    assert rep["N"] == 2 and rep["epsilon"] == [-0.2, -0.1, 0.0, 0.1, 0.2]
    assert len(rep["c"]) >= 3


@pytest.mark.parametrize("nash", [{"epsilons": [-0.1, 0.1, 0.2]}, {"replications": 10}])
def test_nash_validation_exit(tmp_path, nash):
    assert run(tmp_path, {"seed": 2, "nash": nash}, "nash-check") == 2


def test_module_entry_point(tmp_path):
    cfg = write(tmp_path, {"seed": 1, "riccati": {"steps": 256}})
    proc = subprocess.run([sys.executable, "-m", "lqg_mfg", "riccati", "--config", str(cfg), "--out", str(tmp_path / "m")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "m" / "riccati.csv").exists()
