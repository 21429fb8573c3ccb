import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twostage.domain import Scenario, TrialConfig, bundled_scenario
from twostage.phase1 import Phase1Design
from twostage.phase2 import Phase2Design
from twostage.simulator import (ReplicationResult, all_combos, parse_combo, read_results,
                                rng_stream, run_batch, run_phase1, run_trial, simulate_patient,
                                write_event_log, write_results)


def test_rng_streams_are_distinct_and_reproducible():
    a = rng_stream(7, "s1", 0, 0).random(4)
    assert np.array_equal(a, rng_stream(7, "s1", 0, 0).random(4))
    for other in [(8, "s1", 0, 0), (7, "s2", 0, 0), (7, "s1", 1, 0), (7, "s1", 0, 1)]:
        assert not np.array_equal(a, rng_stream(*other).random(4))


def test_patient_cell_frequencies():
    sc = Scenario.from_probabilities("one", [0.3], [0.5])
    rng = np.random.default_rng(3)
    n = 100_000
    counts = np.zeros(4)
    for _ in range(n):
        counts[int(simulate_patient(sc, 1, rng).cell) - 1] += 1
    expected = np.array([0.7 * 0.5, 0.7 * 0.5, 0.3 * 0.5, 0.3 * 0.5])
    assert np.abs(counts / n - expected).max() < 0.005
    with pytest.raises(ValueError):
        simulate_patient(sc, 2, rng)


def test_event_times_lie_in_window():
    cfg = TrialConfig()
    sc = Scenario.from_probabilities("one", [0.9], [0.9])
    rng = np.random.default_rng(0)
    for shape_cfg in (cfg, cfg.replace(event_time="weibull")):
        for _ in range(2000):
            p = simulate_patient(sc, 1, rng, shape_cfg)
            if p.tox_event:
                assert 0 < p.tox_time <= cfg.tox_window
            if p.eff_event:
                assert 0 < p.eff_time <= cfg.eff_window


def test_run_trial_is_deterministic():
    sc = bundled_scenario(2)
    for p1, p2 in all_combos():
        assert run_trial(sc, p1, p2, seed=11, rep=4) == run_trial(sc, p1, p2, seed=11, rep=4)
    assert run_trial(sc, "boin", "top", seed=11, rep=4) != run_trial(sc, "boin", "top", seed=12, rep=4)


def test_toxic_first_dose_stops_phase1():
    sc = Scenario.from_probabilities("hot", [0.999999, 0.9999995, 0.9999999], [0.5, 0.5, 0.5])
    for d in Phase1Design:
        r = run_trial(sc, d, "bop2", seed=1)
        assert r.terminated_stage == "phase1" and r.rp2ds == () and r.rp3d is None
        assert r.n_s2 == 0 and r.dur_total == r.dur_s1
        assert r.allocation[0] == r.n_s1 >= 3


@pytest.mark.parametrize("pair", [("tite-boin", "boin"), ("tite-boin12", "boin12")])
def test_tite_replays_complete_data_design(pair):
    # one patient every 200 days: every outcome is in before the next decision
    cfg = TrialConfig(accrual_rate_s1=0.005, accrual="fixed")
    for seed in range(100):
        sc = bundled_scenario(1 + seed % 9)
        a = run_phase1(sc, pair[0], cfg, seed, 0)
        b = run_phase1(sc, pair[1], cfg, seed, 0)
        assert a.state.trace == b.state.trace
        assert a.state.rp2ds == b.state.rp2ds


@settings(max_examples=150)
@given(st.integers(1, 9), st.sampled_from(all_combos()), st.integers(0, 2**31))
def test_trial_invariants(sc_id, combo, seed):
    sc = bundled_scenario(sc_id)
    cfg = TrialConfig()
    log = []
    r = run_trial(sc, combo[0], combo[1], cfg, seed, 0, log=log)
    r.check()
    toxic = {d.dose_index for d in sc.doses if d.tox_prob > cfg.tox_limit}
    times = [e[0] for e in log]
    assert times == sorted(times)
    # conservation against the event log
    enrol = [e for e in log if e[1] in ("escalation", "backfill", "enrol")]
    assert len(enrol) == r.n_s1 + r.n_s2 == sum(r.allocation)
    assert r.n_tox == sum(1 for e in enrol if e[2] in toxic)
    assert r.n_tox_s1 == sum(1 for e in enrol if e[1] != "enrol" and e[2] in toxic)
    # caps
    esc = sum(1 for e in enrol if e[1] == "escalation")
    assert esc <= cfg.n1
    assert r.n_s1 - esc <= (cfg.backfill_cap * cfg.n_doses if combo[0].backfill else 0)
    assert all(n <= cfg.arm_size for _, _, n in r.arms)
    assert r.n_s2 <= cfg.max_rp2d * cfg.arm_size
    assert r.dur_total >= r.dur_s1 >= 0
    if r.rp3d is not None:
        assert r.rp3d in r.rp2ds


def test_batch_matches_single_runs_and_ignores_parallelism():
    scs = [bundled_scenario(1), bundled_scenario(5)]
    combos = ["boin+bop2", "tite-boin12+top", "bf-boin"]
    serial = run_batch(scs, combos, reps=6, seed=3, chunk=2)
    parallel = run_batch(scs, combos, reps=6, seed=3, parallelism=2, chunk=4)
    assert serial == parallel
    assert len(serial) == 2 * 3 * 6
    for r in serial:
        assert r == run_trial(bundled_scenario(r.scenario), r.p1_design, r.p2_design, seed=3, rep=r.rep)
    with pytest.raises(ValueError):
        run_batch(scs, combos, reps=0)


def test_parse_combo():
    assert parse_combo("TITE-BOIN12+top") == (Phase1Design.TITE_BOIN12, Phase2Design.TOP)
    assert parse_combo("boin") == (Phase1Design.BOIN, None)
    assert len(all_combos()) == 15
    with pytest.raises(ValueError):
        parse_combo("boin+nope")


def test_results_and_event_log_round_trip(tmp_path):
    log = []
    r = run_trial(bundled_scenario(4), "bf-boin", "ts", seed=2, log=log)
    write_results([r, r], tmp_path / "r.jsonl")
    assert read_results(tmp_path / "r.jsonl") == [r, r]
    assert ReplicationResult.from_dict(r.to_dict()) == r
    write_event_log(log, tmp_path / "e.jsonl")
    assert len((tmp_path / "e.jsonl").read_text().splitlines()) == len(log)


@pytest.mark.slow
def test_degenerate_scenario_always_selects_rp3d():
    tox = [i * 1e-12 for i in range(6)]
    sc = Scenario.from_probabilities("sure", tox, [1.0] * 6)
    results = run_batch([sc], ["boin+bop2"], reps=10_000, seed=1)
    assert all(r.rp3d is not None and r.n_s2 > 0 for r in results)
