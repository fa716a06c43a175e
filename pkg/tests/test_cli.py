import csv
import json
import subprocess
import sys

import pytest

from subgeo.cli import main, validate_config, ConfigError


def _run(tmp_path, *args, config=None):
    argv = list(args)
    if config is not None:
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(config))
        argv += ["--config", str(path)]
    return main(argv)


def test_schema_rejection_names_field(tmp_path, capsys):
    cfg = {"version": 1, "rate": {"phi": {"family": "Polynomial", "kappa": 1.5}}}
    assert _run(tmp_path, "rates", "--out", str(tmp_path / "x"), config=cfg) == 2
    err = json.loads(capsys.readouterr().err)
    assert "rate.phi.kappa" in err["error"]["message"]
    with pytest.raises(ConfigError):
        validate_config({"version": 1, "bogus": 1})


def test_unreadable_config_exits_2(tmp_path):
    assert main(["rates", "--config", str(tmp_path / "missing.json")]) == 2


def test_rate_table_contents(tmp_path):
    assert _run(tmp_path, "rates", "--out", str(tmp_path / "r")) == 0
    rows = list(csv.DictReader(open(tmp_path / "r_rates.csv")))
    row = next(r for r in rows if float(r["t"]) == 4.0)
    assert float(row["H"]) == pytest.approx(2.0, abs=1e-12)
    summary = json.loads((tmp_path / "r_summary.json").read_text())
    assert summary["experiment"] == "RateTables" and summary["checks"]["roundtrip"]["passed"]


def test_srwm_pipeline_is_sound_and_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(tmp_path, "drift", "--out", str(a / "s"), "--threads", "1") == 0
    assert _run(tmp_path, "drift", "--out", str(b / "s"), "--threads", "3") == 0
    summary = json.loads((a / "s_summary.json").read_text())
    assert summary["checks"]["soundness"]["passed"]
    for name in ("s_drift.csv", "s_bound.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "subgeo", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "experiment" in proc.stdout
