import json
from pathlib import Path

import numpy as np
import pytest

from knightwalras.cli import main
from knightwalras.scenario import ScenarioError, dumps, load, parse

SCEN = Path(__file__).resolve().parents[1] / "scenarios" / "two_state_interval.json"


def write(tmp_path, obj, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


def base():
    return json.loads(SCEN.read_text())


def test_solve_and_round_trip_verify(tmp_path, capsys):
    out = tmp_path / "solve"
    assert main(["solve", "--scenario", str(SCEN), "--out", str(out)]) == 0
    text = (out / "report.json").read_text()
    rep = json.loads(text)
    assert dumps(rep) == text  # reload and reserialize is byte-identical
    res = rep["results"]
    assert res["verification"]["verdict"] == "pass"
    assert res["no_trade_certificate"]["status"] == "unsupportable"
    assert "disposal" in res["equilibrium"]
    code = main(["verify", "--scenario", str(SCEN), "--candidate", str(out / "report.json"),
                 "--out", str(tmp_path / "v")])
    assert code == 0


def test_verify_full_insurance_reports_slack(tmp_path):
    cand = write(tmp_path, {"psi": [1, 1], "allocation": [[0.5, 0.5], [0.5, 0.5]]}, "c.json")
    assert main(["verify", "--scenario", str(SCEN), "--candidate", cand, "--out", str(tmp_path)]) == 1
    v = json.loads((tmp_path / "report.json").read_text())["results"]["verification"]
    assert v["verdict"] == "fail"
    assert v["budget_slack_supplied"][0] == pytest.approx(1 / 30, abs=1e-15)


def test_verify_autarky_fails_on_optimality(tmp_path):
    cand = write(tmp_path, {"psi": [1, 1], "allocation": [[1 / 3, 2 / 3], [2 / 3, 1 / 3]]}, "c.json")
    assert main(["verify", "--scenario", str(SCEN), "--candidate", cand, "--out", str(tmp_path)]) == 1
    v = json.loads((tmp_path / "report.json").read_text())["results"]["verification"]
    assert any("optimality" in f for f in v["failures"])
    assert max(v["budget_slack"]) <= 1e-12


def test_singleton_solve_marks_agreement(tmp_path):
    s = base()
    s["priors"] = {"vertices": [[0.5, 0.5]]}
    assert main(["solve", "--scenario", write(tmp_path, s), "--out", str(tmp_path)]) == 0
    ad = json.loads((tmp_path / "report.json").read_text())["results"]["arrow_debreu"]
    assert ad["agreement"] is True


def test_malformed_prior_exit_2(tmp_path, capsys):
    s = base()
    s["priors"] = {"vertices": [[0.5, 0.4]]}
    assert main(["solve", "--scenario", write(tmp_path, s), "--out", str(tmp_path)]) == 2
    assert "priors.vertices[0]" in capsys.readouterr().err


def test_unknown_field_and_bad_json(tmp_path, capsys):
    s = base()
    s["agents"][0]["colour"] = "red"
    assert main(["solve", "--scenario", write(tmp_path, s), "--out", str(tmp_path)]) == 2
    assert "agents[0]" in capsys.readouterr().err
    p = tmp_path / "broken.json"
    p.write_text('{"states": 2,')
    assert main(["solve", "--scenario", str(p)]) == 2


def test_missing_scenario_flag_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["solve"])
    assert exc.value.code == 2


def test_sweep_csv_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["sweep", "--scenario", str(SCEN), "--out", str(a), "--seed", "11"]) == 0
    assert main(["sweep", "--scenario", str(SCEN), "--out", str(b), "--seed", "11"]) == 0
    ta, tb = (a / "sweep.csv").read_bytes(), (b / "sweep.csv").read_bytes()
    assert ta == tb
    lines = ta.decode().splitlines()
    assert len(lines) == 5
    assert lines[0].startswith("epsilon,converged,residual,trade_volume,disposal_l1,dist_to_eps0_allocation,"
                               "no_trade_certificate,convention,psi_0,psi_1,c_0_0")


def test_sweep_empty_grid_exit_2(tmp_path):
    s = base()
    s["experiment"]["sweep_grid"] = []
    assert main(["sweep", "--scenario", write(tmp_path, s), "--out", str(tmp_path)]) == 2


def test_sample_rows_and_determinism(tmp_path, capsys):
    s = base()
    s["experiment"]["sampler"]["n"] = 12
    path = write(tmp_path, s)
    assert main(["sample", "--scenario", path, "--out", str(tmp_path / "a"), "--seed", "7"]) == 0
    assert "fraction 0" in capsys.readouterr().out
    assert main(["sample", "--scenario", path, "--out", str(tmp_path / "b"), "--seed", "7"]) == 0
    a = (tmp_path / "a" / "sample.csv").read_bytes()
    assert a == (tmp_path / "b" / "sample.csv").read_bytes()
    assert len(a.decode().splitlines()) == 13


def test_scenario_canonical_round_trip():
    sc = load(SCEN)
    again = parse(json.loads(sc.canonical()))
    assert again.canonical() == sc.canonical()
    assert again.economy.priors == sc.economy.priors
    np.testing.assert_array_equal(again.economy.endowments, sc.economy.endowments)


def test_scenario_semantic_errors():
    s = base()
    s["agents"][0]["endowment"] = [1.0]
    with pytest.raises(ScenarioError, match=r"agents\[0\].endowment"):
        parse(s)
    s = base()
    s["agents"][1]["preference"]["bernoulli"] = {"family": "power", "params": {"gamma": -2}}
    with pytest.raises(ScenarioError, match=r"agents\[1\].preference.bernoulli"):
        parse(s)
    s = base()
    s["solver"] = {"damping": 2.0}
    with pytest.raises(ScenarioError, match="solver"):
        parse(s)
