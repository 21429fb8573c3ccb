import json

import pytest

from twostage import metrics
from twostage.cli import (RunSpec, UsageError, build_config, cmd_boundaries, main,
                          parse_combos, parse_scenarios)
from twostage.domain import TrialConfig, bundled_scenario
from twostage.phase1 import Phase1Design, boin_boundaries, decision_table
from twostage.phase2 import Hypotheses, calibrate, stopping_boundaries
from twostage.simulator import read_results, run_batch


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_boundaries_text_at_030(capsys):
    code, out, _ = run(capsys, "boundaries", "--phi", "0.3")
    assert code == 0
    assert "lambda_e=0.2365" in out and "lambda_d=0.3585" in out


def test_boundaries_json_equals_library(capsys):
    code, out, _ = run(capsys, "boundaries", "--format", "json")
    doc = json.loads(out)
    cfg = TrialConfig()
    b = boin_boundaries(cfg.target, cfg.phi1, cfg.phi2)
    assert (doc["lambda_e"], doc["lambda_d"]) == (b.lambda_e, b.lambda_d)
    rows = decision_table(b, cfg.n1, cfg.safety_cutoff, b.lambda_d)
    assert [tuple(r.values()) for r in doc["table"]] == [tuple(r) for r in rows]
    assert out == cmd_boundaries(cfg.target, None, None, cfg.n1, cfg.safety_cutoff, "json")


def test_boundaries_bad_ordering_exits_2(capsys):
    code, _, err = run(capsys, "boundaries", "--phi", "0.3", "--phi1", "0.4")
    assert code == 2 and "error" in err


def test_calibrate_json_equals_library(capsys):
    code, out, _ = run(capsys, "calibrate", "--design", "ts", "--format", "json")
    assert code == 0
    doc = json.loads(out)
    cfg = TrialConfig()
    h = Hypotheses.from_config(cfg)
    s = calibrate(h, cfg.interim_sizes, cfg.arm_size, cfg.type1_alpha, "ts", cfg.efficacy_looks)
    assert doc["schedule"]["lam_t"] == s.lam_t and doc["schedule"]["lam_e"] == s.lam_e
    assert [tuple(r.values()) for r in doc["boundaries"]] == stopping_boundaries(s, h, "ts")


def test_calibrate_infeasible_exits_1(capsys):
    code, _, err = run(capsys, "calibrate", "--alpha", "0")
    assert code == 1 and "calibration failed" in err


def test_calibrate_bad_hypotheses_exit_2(capsys):
    code, _, _ = run(capsys, "calibrate", "--p-alt", "0.6")
    assert code == 2


def test_parse_helpers():
    assert [s.name for s in parse_scenarios("1-3,5")] == [bundled_scenario(i).name for i in (1, 2, 3, 5)]
    assert len(parse_combos("all")) == 15
    assert parse_combos("phase1") == [(d, None) for d in Phase1Design]
    assert len(parse_combos("boin+ts,boin+ts")) == 1
    with pytest.raises(UsageError):
        parse_combos("boin+xyz")
    with pytest.raises(UsageError):
        parse_scenarios("1,1")
    with pytest.raises(UsageError):
        RunSpec([bundled_scenario(1)], [], 1)
    with pytest.raises(UsageError):
        RunSpec([bundled_scenario(1)], parse_combos("boin"), 0)


def test_config_precedence(tmp_path):
    f = tmp_path / "c.ini"
    f.write_text("[trial]\nschema_version = 1\naccrual_rate_s1 = 0.2\narm_size = 30\n"
                 "interim_sizes = 10, 20\n")
    cfg = build_config(str(f), ["accrual_rate_s1=0.05"])
    assert (cfg.accrual_rate_s1, cfg.arm_size) == (0.05, 30)
    with pytest.raises(UsageError):
        build_config(None, ["accrual_rate_s1"])


def test_simulate_single_combo_matches_library(tmp_path, capsys):
    out = tmp_path / "o"
    code, _, _ = run(capsys, "simulate", "--scenarios", "2", "--combos", "tite-boin12+top",
                     "--reps", "5", "--seed", "7", "--out", str(out), "--quiet",
                     "--event-logs", "1")
    assert code == 0
    results = read_results(out / "results.jsonl")
    assert results == run_batch([bundled_scenario(2)], ["tite-boin12+top"], reps=5, seed=7)
    summaries = metrics.summarize(results, [bundled_scenario(2)])
    assert (out / "metrics.csv").read_text() == metrics.render(summaries, "csv")
    assert {r["p1_design"] + "+" + r["p2_design"] for r in
            json.loads((out / "metrics.json").read_text())} == {"tite-boin12+top"}
    assert len(list((out / "events").glob("*.jsonl"))) == 1


def test_simulate_twice_is_identical(tmp_path, capsys):
    docs = []
    for k in range(2):
        out = tmp_path / f"o{k}"
        assert run(capsys, "simulate", "--scenarios", "1,4", "--combos", "boin+bop2,bf-boin+ts",
                   "--reps", "1", "--seed", "7", "--out", str(out), "--quiet")[0] == 0
        docs.append(((out / "metrics.csv").read_bytes(), (out / "results.jsonl").read_bytes()))
    assert docs[0] == docs[1]


def test_simulate_bad_config_exits_2(tmp_path, capsys):
    code, _, err = run(capsys, "simulate", "--scenarios", "1", "--combos", "boin", "--reps", "1",
                       "--out", str(tmp_path), "--set", "no_such_field=3")
    assert code == 2 and "error" in err
    code, _, _ = run(capsys, "simulate", "--scenarios", "99", "--reps", "1", "--out", str(tmp_path))
    assert code == 2


def test_report_rerenders_and_honours_env(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("TWOSTAGE_OUT", str(tmp_path))
    assert run(capsys, "simulate", "--scenarios", "3", "--combos", "boin12+bop2", "--reps", "3",
               "--quiet")[0] == 0
    code, out, _ = run(capsys, "report", "--format", "csv")
    assert code == 0 and out == (tmp_path / "metrics.csv").read_text()
    code, _, err = run(capsys, "report", str(tmp_path / "missing.jsonl"))
    assert code == 2 and "no results file" in err
