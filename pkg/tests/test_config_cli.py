from __future__ import annotations

import csv
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qbsde import config as C
from qbsde.cli import build_parser, load_manifest, main, reproduce_all, shipped_manifest
from qbsde.errors import ConfigError

MINIMAL = 'name = "t"\ncommand = "solve-pure"\nseed = 1\n'


def test_defaults_filled_and_sorted():
    cfg = C.loads(MINIMAL)
    assert cfg["grid"] == dict(sorted(C.DEFAULTS["grid"].items()))
    assert list(cfg) == sorted(cfg)
    assert cfg["criteria"] == [] and cfg["generator"] == []


def test_roundtrip_canonical():
    for cfg in load_manifest(shipped_manifest()):
        again = C.loads(C.dumps(cfg))
        assert again == cfg
        assert C.dumps(again) == C.dumps(cfg)


@pytest.mark.parametrize("text,key", [
    ('command = "solve-pure"\nseed = 1\n', "name"),
    (MINIMAL.replace("solve-pure", "fly"), "command"),
    (MINIMAL + "[grid]\nsteps = 0\n", "grid.steps"),
    (MINIMAL + "[grid]\npaths = 1.5\n", "grid.paths"),
    (MINIMAL + "[grid]\nbogus = 1\n", "grid.bogus"),
    (MINIMAL + "[solver]\nscheme = 3\n", "solver.scheme"),
    (MINIMAL + "[coefficient]\nc = 1.0\n", "coefficient.family"),
    (MINIMAL + "[coefficient]\nfamily = \"nope\"\n", "coefficient.family"),
    (MINIMAL + "[[generator]]\nb = 1.0\n", "generator[0].family"),
    (MINIMAL + "extra = 1\n", "extra"),
    (MINIMAL.replace("seed = 1", "seed = -1"), "seed"),
    (MINIMAL.replace("seed = 1", "seed = true"), "seed"),
])
def test_config_errors_carry_key(text, key):
    with pytest.raises(ConfigError) as exc:
        C.loads(text)
    assert exc.value.key == key


def test_invalid_toml():
    with pytest.raises(ConfigError):
        C.loads("name = ")


@given(seed=st.integers(0, 2**31), paths=st.integers(2, 10**6), steps=st.integers(1, 10**4))
def test_overrides_roundtrip(seed, paths, steps):
    cfg = C.apply_overrides(C.loads(MINIMAL), seed=seed, paths=paths, steps=steps)
    assert (cfg["seed"], cfg["grid"]["paths"], cfg["grid"]["steps"]) == (seed, paths, steps)
    assert C.loads(C.dumps(cfg)) == cfg


def test_transforms_default_identity(tmp_path, capsys):
    assert main(["transforms", "--out", str(tmp_path)]) == 0
    data = np.loadtxt(tmp_path / "transforms" / "u_table.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(data[:, 1], data[:, 0])
    np.testing.assert_array_equal(data[:, 2], 1.0)
    summary = json.loads((tmp_path / "transforms" / "summary.json").read_text())
    assert summary["passed"] and summary["scenario"]["command"] == "transforms"
    assert "PASS" in capsys.readouterr().out


def test_unknown_subcommand():
    with pytest.raises(SystemExit) as exc:
        main(["levitate"])
    assert exc.value.code == 2


def test_parser_commands():
    p = build_parser()
    for cmd in C.COMMANDS + ("reproduce",):
        assert p.parse_args([cmd]).command == cmd


def test_bad_config_exit_two(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text(MINIMAL + "[grid]\nsteps = -3\n")
    assert main(["solve-pure", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "grid.steps" in capsys.readouterr().err


def _failing(tmp_path):
    doc = tmp_path / "fail.toml"
    doc.write_text('name = "fail"\ncommand = "solve-bsde"\nseed = 2\n[grid]\nsteps = 5\npaths = 500\n'
                   '[checks]\nuse_expected = true\nexpected_y0 = 5.0\n')
    return doc


def test_failing_scenario_exit_one(tmp_path):
    assert main(["solve-bsde", "--config", str(_failing(tmp_path)), "--out", str(tmp_path / "o")]) == 1
    summary = json.loads((tmp_path / "o" / "fail" / "summary.json").read_text())
    assert not summary["passed"]
    assert any(c["name"] == "y0_vs_expected" and not c["passed"] for c in summary["checks"])


def test_overrides_from_cli(tmp_path):
    assert main(["solve-bsde", "--seed", "9", "--paths", "300", "--steps", "4", "--out", str(tmp_path)]) == 0
    cfg = C.load(tmp_path / "solve-bsde" / "scenario.toml")
    assert (cfg["seed"], cfg["grid"]["paths"], cfg["grid"]["steps"]) == (9, 300, 4)


def test_empty_manifest(tmp_path):
    m = tmp_path / "m.toml"
    m.write_text("scenarios = []\n")
    assert main(["reproduce", "--config", str(m), "--out", str(tmp_path / "o")]) == 0
    with open(tmp_path / "o" / "acceptance.csv") as fh:
        assert list(csv.reader(fh)) == [["scenario", "command", "criterion", "check", "status", "value",
                                         "threshold"]]


def test_manifest_with_failure(tmp_path):
    _failing(tmp_path)
    (tmp_path / "ok.toml").write_text('name = "ok"\ncommand = "transforms"\nseed = 0\n')
    m = tmp_path / "m.toml"
    m.write_text('scenarios = ["ok.toml", "fail.toml"]\n')
    assert main(["reproduce", "--config", str(m), "--out", str(tmp_path / "o")]) == 1
    with open(tmp_path / "o" / "acceptance.csv") as fh:
        rows = list(csv.DictReader(fh))
    fails = [r for r in rows if r["status"] == "FAIL"]
    assert len(fails) == 1 and fails[0]["scenario"] == "fail"
    rep = reproduce_all(m, tmp_path / "o2")
    assert not rep.passed and [r.passed for r in rep.results] == [True, False]


def test_duplicate_manifest_names(tmp_path):
    (tmp_path / "a.toml").write_text('name = "x"\ncommand = "transforms"\nseed = 0\n')
    (tmp_path / "b.toml").write_text('name = "x"\ncommand = "transforms"\nseed = 1\n')
    m = tmp_path / "m.toml"
    m.write_text('scenarios = ["a.toml", "b.toml"]\n')
    with pytest.raises(ConfigError):
        load_manifest(m)
    assert main(["reproduce", "--config", str(m), "--out", str(tmp_path)]) == 2


def test_shipped_manifest_loads():
    cfgs = load_manifest(shipped_manifest())
    assert len(cfgs) == 16
    assert {c["command"] for c in cfgs} == set(C.COMMANDS)
