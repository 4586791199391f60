import csv
import json
from pathlib import Path

import pytest

import uwballoc
from uwballoc.cli import main

SCENARIO1 = Path(uwballoc.__file__).parent / "scenarios" / "scenario1.toml"
SMALL = ["--override", "run.n_trials=1", "--override", "primary.bandwidths_mhz=[10, 50]"]


def test_validate_ok(capsys):
    assert main(["validate-config", "--config", str(SCENARIO1)]) == 0
    assert capsys.readouterr().out.startswith("ok: 3 users, 500 trials")


def test_unknown_key_exits_2(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text(SCENARIO1.read_text() + "\n[extra]\nx = 1\n")
    assert main(["validate-config", "--config", str(cfg)]) == 2
    assert "unknown key" in capsys.readouterr().err


def test_bad_override_exits_2():
    assert main(["validate-config", "--config", str(SCENARIO1), "--override", "run.bogus=1"]) == 2


def test_missing_file_exits_3(tmp_path):
    assert main(["validate-config", "--config", str(tmp_path / "nope.toml")]) == 3


def test_run_writes_one_row_per_algorithm_bandwidth_user(tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--config", str(SCENARIO1), "--out", str(out)] + SMALL) == 0
    with open(out / "trials.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 * 2 * 3
    keys = {(r["algorithm"], r["bandwidth_mhz"], r["user_id"]) for r in rows}
    assert len(keys) == len(rows)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 1 and manifest["version"] == uwballoc.__version__
    assert manifest["config"]["run"]["n_trials"] == 1
    assert len(manifest["config_sha256"]) == 64
    assert (out / "summary.csv").read_text().startswith("algorithm,bandwidth_mhz")


def test_run_flags(tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--config", str(SCENARIO1), "--out", str(out), "--algo", "suboptimal",
                 "--seed", "5", "--trials", "2"] + SMALL[2:]) == 0
    with open(out / "trials.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["algorithm"] for r in rows} == {"suboptimal"}
    assert {r["trial"] for r in rows} == {"0", "1"}
    assert json.loads((out / "manifest.json").read_text())["seed"] == 5


def test_run_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert main(["run", "--config", str(SCENARIO1), "--out", str(tmp_path / name)] + SMALL) == 0
    for f in ("trials.csv", "summary.csv", "manifest.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_dump_mcs(capsys, tmp_path):
    assert main(["dump-mcs"]) == 0
    text = capsys.readouterr().out
    assert len(text.strip().splitlines()) == 9
    target = tmp_path / "mcs.csv"
    assert main(["dump-mcs", "--out", str(target)]) == 0
    assert target.read_text() == text


def test_oracle_check(capsys, tmp_path):
    report = tmp_path / "r.json"
    assert main(["oracle-check", "--instances", "5", "--out", str(report)]) == 0
    data = json.loads(report.read_text())
    assert data["instances"] == 5 and data["max_sum_rate_gap"] <= 0.02


def test_missing_subcommand():
    with pytest.raises(SystemExit):
        main([])
