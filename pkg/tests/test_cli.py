import csv
import json
import shutil
from pathlib import Path

import pytest

from orbent import cli


def write_cfg(tmp_path, obj, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return path


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


SIGMA = {"scenario": "sigma", "measures": [{"kind": "haar", "cells": 1024}, {"kind": "roots", "m": 3}]}
CONC = {"scenario": "concentration", "seed": 1, "sweep": {"N": [32, 64, 128], "m": [2], "delta": [0.3]}, "trials": 10, "plots": True}


# ---------------------------------------------------------------- validation


def test_invalid_config_lists_fields(tmp_path, capsys):
    bad = {"scenario": "orbvolume", "sweep": {"N": [16, -2], "m": [], "delta": [0.1]}, "trials": 0, "mode": "best", "bogus": 1}
    assert cli.main(["run", "-c", str(write_cfg(tmp_path, bad)), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    for field in ("sweep.N[1]", "sweep.m", "trials", "mode", "bogus"):
        assert f"config error: {field}" in err
    assert not (tmp_path / "o").exists()


def test_scenario_specific_requirements():
    with pytest.raises(cli.ConfigError) as exc:
        cli.validate_config({"scenario": "remark2", "sweep": {"N": [8], "m": [1], "delta": [0.1]}, "n": 1})
    assert any(p.startswith("n:") for p in exc.value.problems)
    with pytest.raises(cli.ConfigError) as exc:
        cli.validate_config({"scenario": "theorem1", "sweep": {"N": [8], "m": [5], "delta": [0.1]}})
    assert any("degree cap" in p for p in exc.value.problems)
    with pytest.raises(cli.ConfigError) as exc:
        cli.validate_config({"scenario": "sigma", "measures": [{"kind": "roots", "m": 0}, {"kind": "grid", "grid": [0.3], "cells": 1}]})
    assert any(p.startswith("measures[0].m") for p in exc.value.problems)
    assert any(p.startswith("measures[1]") for p in exc.value.problems)
    with pytest.raises(cli.ConfigError):
        cli.validate_config({"scenario": "concentration", "sweep": {"N": [8], "m": [1], "delta": [0.1]}, "mode": "pool"})


def test_unreadable_config(tmp_path, capsys):
    (tmp_path / "broken.json").write_text("{")
    assert cli.run(tmp_path / "broken.json", tmp_path / "o") == 2
    assert "cannot read config" in capsys.readouterr().err


def test_config_hash_canonical():
    a = cli.validate_config({"scenario": "sigma", "measures": [{"kind": "haar"}], "seed": 3})
    b = cli.validate_config(json.loads('{"seed": 3, "measures": [{"kind": "haar"}], "scenario": "sigma"}'))
    assert a.hash == b.hash
    assert cli.validate_config({"scenario": "sigma", "measures": [{"kind": "haar"}]}, seed=4).hash != a.hash


# ---------------------------------------------------------------- runs


def test_sigma_haar_row(tmp_path):
    out = tmp_path / "o"
    assert cli.run(write_cfg(tmp_path, SIGMA), out) == 0
    rows = read_csv(out / "summary.csv")
    assert abs(float(rows[0]["value"])) < 1e-3
    assert rows[1]["value"] == "-inf"
    rec = json.loads((out / "records.jsonl").read_text().splitlines()[0])
    assert rec["schema"] == cli.SCHEMA and rec["scenario"] == "sigma"
    assert set(rec) == {"schema", "configHash", "scenario", "cell", "seed", "result"}


def test_orbvolume_n1_row(tmp_path):
    cfg = {"scenario": "orbvolume", "sweep": {"N": [16], "m": [3], "delta": [0.1]}, "trials": 15, "n": 1}
    out = tmp_path / "o"
    assert cli.run(write_cfg(tmp_path, cfg), out) == 0
    row = read_csv(out / "summary.csv")[0]
    assert float(row["estimate.pHat"]) == 1.0 and float(row["estimate.logProxy"]) == 0.0


def test_concentration_trend_column_and_plots(tmp_path):
    out = tmp_path / "o"
    assert cli.run(write_cfg(tmp_path, CONC), out) == 0
    rows = read_csv(out / "summary.csv")
    assert [r["cell.N"] for r in rows] == ["32", "64", "128"]
    assert len({r["trend"] for r in rows}) == 1
    assert rows[0]["trend"] in ("nondecreasing", "nondecreasing-within-ci", "decreasing")
    for name in ("phat_vs_N.svg", "logproxy_vs_N.svg"):
        first = (out / name).read_bytes()
        assert first.startswith(b"<?xml")
        # plots are a function of the records file alone
        (out / name).unlink()
        cli.write_plots(out / "records.jsonl", out)
        assert (out / name).read_bytes() == first


def test_idempotent_and_thread_independent(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path, {"scenario": "remark2", "seed": 2, "sweep": {"N": [12], "m": [2, 3], "delta": [0.2]}, "trials": 8, "n": 2})
    assert cli.main(["run", "-c", str(cfg), "--out", str(tmp_path / "a"), "--threads", "1"]) == 0
    assert cli.main(["run", "-c", str(cfg), "--out", str(tmp_path / "b"), "--threads", "4"]) == 0
    monkeypatch.setenv("ORBENT_THREADS", "3")
    assert cli.main(["run", "-c", str(cfg), "--out", str(tmp_path / "c")]) == 0
    a = (tmp_path / "a" / "records.jsonl").read_bytes()
    assert a == (tmp_path / "b" / "records.jsonl").read_bytes() == (tmp_path / "c" / "records.jsonl").read_bytes()
    timing = json.loads((tmp_path / "a" / "timings.jsonl").read_text().splitlines()[0])
    assert set(timing) == {"cell", "wallTime"}
    assert b"wallTime" not in a


def test_seed_flag_overrides_config(tmp_path):
    cfg = write_cfg(tmp_path, {**CONC, "plots": False})
    cli.main(["run", "-c", str(cfg), "--out", str(tmp_path / "a"), "--seed", "42"])
    rec = json.loads((tmp_path / "a" / "records.jsonl").read_text().splitlines()[0])
    assert rec["seed"] == 42


def test_threads_resolution(monkeypatch):
    monkeypatch.delenv("ORBENT_THREADS", raising=False)
    assert cli.resolve_threads(None) == 1
    monkeypatch.setenv("ORBENT_THREADS", "6")
    assert cli.resolve_threads(None) == 6
    assert cli.resolve_threads(2) == 2
    monkeypatch.setenv("ORBENT_THREADS", "many")
    with pytest.raises(cli.ConfigError):
        cli.resolve_threads(None)


def test_cell_errors_recorded_and_run_continues(tmp_path, monkeypatch):
    real = cli.entropy.sigma

    def flaky(mu):
        if mu.has_atoms:
            raise ArithmeticError("boom")
        return real(mu)

    monkeypatch.setattr(cli.entropy, "sigma", flaky)
    out = tmp_path / "o"
    assert cli.run(write_cfg(tmp_path, SIGMA), out) == 0
    recs = cli.read_records(out / "records.jsonl")
    assert "error" not in recs[0]["result"]
    assert recs[1]["result"]["error"] == "ArithmeticError: boom"


@pytest.mark.parametrize("scenario", ["gammaR", "chiu", "remark1", "prop1"])
def test_other_scenarios_smoke(tmp_path, scenario):
    cfg = {"scenario": scenario, "sweep": {"N": [12], "m": [1], "delta": [0.3]}, "trials": 4,
           "v": [{"kind": "haar", "cells": 64}], "theorem1": {"chainTrials": 2, "calibrationTrials": 2, "witnesses": 1}}
    if scenario == "remark1":
        cfg["v"] = [{"kind": "roots", "m": 3}]
    if scenario == "gammaR":
        cfg.update(mode="pool", pool=2)
    out = tmp_path / "o"
    assert cli.run(write_cfg(tmp_path, cfg), out) == 0
    rec = cli.read_records(out / "records.jsonl")[0]
    assert "error" not in rec["result"], rec["result"]
    assert "estimate" in rec["result"]


# ---------------------------------------------------------------- verify


def test_verify_bundled_goldens(capsys):
    assert cli.main(["verify"]) == 0
    assert "ok" in capsys.readouterr().out


def _copy_golden(tmp_path, case="concentration"):
    dest = tmp_path / "goldens"
    shutil.copytree(cli.bundled_golden_dir() / case, dest / case)
    return dest


def test_verify_perturbed_seed_fails(tmp_path, capsys):
    root = _copy_golden(tmp_path)
    cfg_path = root / "concentration" / "config.json"
    cfg = json.loads(cfg_path.read_text())
    cfg["seed"] += 1
    cfg_path.write_text(json.dumps(cfg))
    assert cli.verify(root) == 1
    err = capsys.readouterr().err
    assert "FAIL concentration" in err
    assert "line 1.seed: expected" in err


def test_verify_tolerance_is_declared(tmp_path):
    root = _copy_golden(tmp_path, "sigma")
    rec_path = root / "sigma" / "records.jsonl"
    lines = rec_path.read_text().splitlines()
    rec = json.loads(lines[0])
    rec["result"]["value"] += 1e-6
    rec_path.write_text("\n".join([json.dumps(rec)] + lines[1:]) + "\n")
    assert cli.verify(root) == 1
    (root / "sigma" / "tolerance.json").write_text(json.dumps({"atol": 1e-5}))
    assert cli.verify(root) == 0


def test_verify_missing(tmp_path, capsys):
    assert cli.main(["verify", "--golden", str(tmp_path / "nowhere")]) == 3
    assert "missing" in capsys.readouterr().err
    root = _copy_golden(tmp_path)
    (root / "concentration" / "records.jsonl").unlink()
    assert cli.verify(root) == 3
    assert "missing: golden concentration lacks records.jsonl" in capsys.readouterr().err
    empty = tmp_path / "empty"
    empty.mkdir()
    assert cli.verify(empty) == 3


def test_write_golden_roundtrip(tmp_path):
    cfg = write_cfg(tmp_path, SIGMA)
    cli.write_golden(cfg, tmp_path / "g" / "sigma")
    assert cli.verify(tmp_path / "g") == 0
