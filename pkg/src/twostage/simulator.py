"""Seeded two-stage trial simulation.

Virtual patients arrive by a Poisson (or evenly spaced) process and are
driven through a Phase I design and then a Phase II design on a continuous
day clock.  Randomness is split into keyed streams so that designs compared
on the same replication see the same patients:

* Phase I outcomes are pre-drawn per (dose, k-th patient at that dose),
  shared by all Phase I designs;
* Phase II outcomes are pre-drawn per (dose, k-th patient in that arm),
  shared by all Phase II designs;
* arrival gaps and arm randomization have their own streams.
"""

from __future__ import annotations

import json
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .domain import PatientRecord, Scenario, TrialConfig
from .phase1 import (AssignCohort, Backfill, CompletePhase, Phase1Design, Phase1State,
                     SuspendUntil, TerminateTrial, step)
from .phase2 import (ArmState, ArmStatus, CutoffSchedule, Hypotheses, LookResult, Margin,
                     Phase2Design, monitor_look, schedule_for, select_rp3d)

_P1_OUTCOMES, _P1_ARRIVALS, _P2_OUTCOMES, _P2_ARRIVALS, _P2_RANDOM = range(5)


def _scenario_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def rng_stream(seed: int, scenario: str, rep: int, purpose: int) -> np.random.Generator:
    """Generator for one (seed, scenario, replication, purpose) stream."""
    ss = np.random.SeedSequence(seed, spawn_key=(_scenario_key(scenario), rep, purpose))
    return np.random.Generator(np.random.PCG64(ss))


# ------------------------------------------------------------------ patients

def _event_time(u: float, window: float, cfg: TrialConfig) -> float:
    """Map u in [0, 1) to an event time in (0, window]."""
    v = 1.0 - u
    if cfg.event_time == "uniform":
        return window * v
    # Weibull with scale = window, truncated to the window
    return window * (-math.log1p(-v * (1.0 - math.exp(-1.0)))) ** (1.0 / cfg.weibull_shape)


def patient_from_uniforms(u: Sequence[float], p: float, q: float, cfg: TrialConfig,
                          pid: int, dose: int, arrival: float, source: str) -> PatientRecord:
    tox = bool(u[0] < p)
    eff = bool(u[1] < q)
    return PatientRecord(
        id=pid, dose=dose, arrival=arrival,
        tox_event=tox, tox_time=_event_time(u[2], cfg.tox_window, cfg) if tox else None,
        eff_event=eff, eff_time=_event_time(u[3], cfg.eff_window, cfg) if eff else None,
        source=source)


def simulate_patient(scenario: Scenario, dose: int, rng: np.random.Generator,
                     cfg: TrialConfig = TrialConfig(), pid: int = 0, arrival: float = 0.0,
                     source: str = "escalation") -> PatientRecord:
    """One patient at ``dose``; toxicity and efficacy drawn independently."""
    if not 1 <= dose <= len(scenario):
        raise ValueError(f"dose {dose} outside 1..{len(scenario)}")
    d = scenario.doses[dose - 1]
    return patient_from_uniforms(rng.random(4), d.tox_prob, d.eff_prob, cfg, pid, dose, arrival, source)


class ArrivalProcess:
    def __init__(self, rng: np.random.Generator, rate: float, mode: str):
        if rate <= 0:
            raise ValueError("accrual rate must be positive")
        self.rng, self.mean, self.mode = rng, 1.0 / rate, mode

    def gap(self) -> float:
        if self.mode == "fixed":
            return self.mean
        return float(self.rng.exponential(self.mean))


class OutcomeBank:
    """Pre-drawn latent uniforms, indexed by dose and per-dose patient order."""

    def __init__(self, rng: np.random.Generator, n_doses: int, per_dose: int):
        self.u = rng.random((n_doses, per_dose, 4))
        self.used = [0] * n_doses

    def next(self, dose: int) -> np.ndarray:
        k = self.used[dose - 1]
        self.used[dose - 1] += 1
        if k < self.u.shape[1]:
            return self.u[dose - 1, k]
        raise IndexError(f"outcome bank for dose {dose} exhausted")


# ------------------------------------------------------------------ results

@dataclass
class ReplicationResult:
    scenario: str
    p1_design: str
    p2_design: Optional[str]
    rep: int
    rp2ds: tuple
    rp3d: Optional[int]
    terminated_stage: str               # "none" | "phase1" | "phase2"
    n_s1: int
    n_s2: int
    n_tox_s1: int
    n_tox: int
    dur_s1: float
    dur_total: float
    allocation: tuple
    arms: tuple = ()                    # (dose, status, n enrolled) per Phase II arm

    def __post_init__(self):
        self.rp2ds = tuple(self.rp2ds)
        self.allocation = tuple(self.allocation)
        self.arms = tuple(tuple(a) for a in self.arms)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ReplicationResult":
        return cls(**d)

    def check(self) -> None:
        if self.terminated_stage == "phase1" and (self.rp2ds or self.rp3d is not None):
            raise AssertionError("Phase I termination with recommendations")
        if self.rp3d is not None and self.rp3d not in self.rp2ds:
            raise AssertionError("RP3D is not an RP2D")
        if self.n_s1 + self.n_s2 != sum(self.allocation):
            raise AssertionError("allocation does not add up")


@dataclass
class Phase1Outcome:
    state: Phase1State
    end: float
    events: list = field(default_factory=list)


@dataclass
class Phase2Outcome:
    arms: list
    rp3d: Optional[int]
    end: float
    events: list = field(default_factory=list)


# ------------------------------------------------------------------ phase I

def run_phase1(scenario: Scenario, design: Union[str, Phase1Design], cfg: TrialConfig,
               seed: int, rep: int, log: bool = False) -> Phase1Outcome:
    design = Phase1Design.parse(design)
    if cfg.n_doses != len(scenario):
        cfg = cfg.replace(n_doses=len(scenario))
    bank = OutcomeBank(rng_stream(seed, scenario.name, rep, _P1_OUTCOMES), cfg.n_doses,
                       cfg.n1 + cfg.backfill_cap)
    arrivals = ArrivalProcess(rng_stream(seed, scenario.name, rep, _P1_ARRIVALS),
                              cfg.accrual_rate_s1, cfg.accrual)
    state = Phase1State(design, cfg)
    events = []
    t = 0.0                              # day on which the next patient is ready
    while True:
        state.clock = t
        act = step(design, state)
        if isinstance(act, (AssignCohort, Backfill)):
            source = "escalation" if isinstance(act, AssignCohort) else "backfill"
            d = scenario.doses[act.dose - 1]
            p = patient_from_uniforms(bank.next(act.dose), d.tox_prob, d.eff_prob, cfg,
                                      len(state.patients), act.dose, t, source)
            state.add(p)
            if log:
                events.append((t, source, act.dose, p.id))
            t += arrivals.gap()
        elif isinstance(act, SuspendUntil):
            # a patient who arrives meanwhile waits and is enrolled when accrual resumes
            if log:
                events.append((t, "suspend", state.current_dose, None))
            t = max(t, act.time)
        else:
            last = max(state.resolution_time(p) for p in state.patients)
            end = min(t, last)
            if log:
                kind = "phase1_complete" if isinstance(act, CompletePhase) else "phase1_stop"
                events.append((end, kind, None, None))
            return Phase1Outcome(state, end, events)


# ------------------------------------------------------------------ phase II

def run_phase2(scenario: Scenario, design: Union[str, Phase2Design], rp2ds: Sequence[int],
               cfg: TrialConfig, seed: int, rep: int, start: float,
               schedule: Optional[CutoffSchedule] = None, log: bool = False,
               first_id: int = 0, phase1_patients: Sequence[PatientRecord] = ()) -> Phase2Outcome:
    design = Phase2Design.parse(design)
    s = schedule_for(design, cfg) if schedule is None else schedule
    h = Hypotheses.from_config(cfg)
    bank = OutcomeBank(rng_stream(seed, scenario.name, rep, _P2_OUTCOMES), len(scenario),
                       cfg.arm_size)
    arrivals = ArrivalProcess(rng_stream(seed, scenario.name, rep, _P2_ARRIVALS),
                              cfg.accrual_rate_s2, cfg.accrual)
    rand = rng_stream(seed, scenario.name, rep, _P2_RANDOM)
    arms = [ArmState(d) for d in rp2ds]
    prior_data = {d: [p for p in phase1_patients if p.dose == d] for d in rp2ds}
    events = []
    block: list = []
    block_set: tuple = ()
    t = start
    end = start
    pid = first_id
    while True:
        open_arms = tuple(i for i, a in enumerate(arms)
                          if a.status is ArmStatus.ACTIVE and a.awaiting is None
                          and a.n < s.arm_size)
        waiting = [(a.look_time, i) for i, a in enumerate(arms) if a.awaiting is not None]
        next_look = min(waiting) if waiting else (math.inf, -1)
        if open_arms and t < next_look[0]:
            if open_arms != block_set or not block:
                block_set = open_arms
                block = list(rand.permutation(list(open_arms)))
            i = int(block.pop())
            arm = arms[i]
            d = scenario.doses[arm.dose - 1]
            p = patient_from_uniforms(bank.next(arm.dose), d.tox_prob, d.eff_prob, cfg, pid, arm.dose,
                                      t, "phase2")
            pid += 1
            arm.patients.append(p)
            if log:
                events.append((t, "enrol", arm.dose, p.id))
            if arm.n in s.looks:
                arm.awaiting = arm.n
                arm.look_time = arm.look_ready_time(t, cfg, s, design)
            t += arrivals.gap()
        elif waiting:
            when, i = next_look
            arm = arms[i]
            m = arm.awaiting
            data = _look_data(arm, when, cfg, design, prior_data.get(arm.dose, ()))
            result = monitor_look(data, h, s, m, design)
            arm.awaiting, arm.look_time = None, math.inf
            arm.looks_done += 1
            end = max(end, when)
            if result is LookResult.NOGO:
                arm.status, arm.stopped_at = ArmStatus.NOGO, m
            elif m == s.arm_size:
                arm.status = ArmStatus.GO
            if log:
                events.append((when, f"look{m}:{arm.status.value}", arm.dose, None))
            t = max(t, when)
        else:
            break
    rp3d = select_rp3d(arms, cfg.weights)
    return Phase2Outcome(arms, rp3d, end, events)


def _look_data(arm: ArmState, when: float, cfg: TrialConfig, design: Phase2Design,
               prior_patients: Sequence[PatientRecord]):
    data = arm.margin_data(when, cfg, design.tite)
    if cfg.pool_phase1_data and prior_patients:
        extra = ArmState(arm.dose, list(prior_patients)).margin_data(math.inf, cfg, False)
        data.n_tox += extra.n_tox
        data.tox_info += extra.tox_info
        data.n_resp += extra.n_resp
        data.eff_info += extra.eff_info
    return data


# ------------------------------------------------------------------ trials

def _assemble(scenario: Scenario, cfg: TrialConfig, p1: Phase1Design, rep: int,
              ph1: Phase1Outcome, p2: Optional[Phase2Design],
              ph2: Optional[Phase2Outcome]) -> ReplicationResult:
    toxic = {i for i, d in enumerate(scenario.doses, start=1) if d.tox_prob > cfg.tox_limit}
    alloc = [0] * len(scenario)
    for p in ph1.state.patients:
        alloc[p.dose - 1] += 1
    n_s1 = len(ph1.state.patients)
    n_tox_s1 = sum(1 for p in ph1.state.patients if p.dose in toxic)
    rp2ds = ph1.state.rp2ds if ph1.state.complete else ()
    n_s2 = n_tox2 = 0
    arms = ()
    rp3d = None
    dur_total = ph1.end
    if ph2 is not None:
        for a in ph2.arms:
            alloc[a.dose - 1] += a.n
            n_s2 += a.n
            if a.dose in toxic:
                n_tox2 += a.n
        arms = tuple((a.dose, a.status.value, a.n) for a in ph2.arms)
        rp3d = ph2.rp3d
        dur_total = ph2.end
    if not rp2ds:
        stage = "phase1"
    elif p2 is None:
        stage = "none"
    else:
        stage = "none" if rp3d is not None else "phase2"
    r = ReplicationResult(scenario.name, p1.value, p2.value if p2 else None, rep, rp2ds, rp3d,
                          stage, n_s1, n_s2, n_tox_s1, n_tox_s1 + n_tox2, ph1.end, dur_total,
                          tuple(alloc), arms)
    r.check()
    return r


def run_trial(scenario: Scenario, p1_design, p2_design, cfg: TrialConfig = TrialConfig(),
              seed: int = 0, rep: int = 0, log: Optional[list] = None) -> ReplicationResult:
    """One replication; ``p2_design=None`` stops after Phase I.

    If ``log`` is a list, (time, kind, dose, patient id) events are appended.
    """
    return _run_combos(scenario, p1_design, [p2_design], cfg, seed, rep, log)[0]


def _run_combos(scenario: Scenario, p1_design, p2_designs: Sequence, cfg: TrialConfig,
                seed: int, rep: int, log: Optional[list] = None) -> list[ReplicationResult]:
    """Phase I once, then each Phase II design on the same recommendation."""
    p1 = Phase1Design.parse(p1_design)
    if cfg.n_doses != len(scenario):
        cfg = cfg.replace(n_doses=len(scenario))
    ph1 = run_phase1(scenario, p1, cfg, seed, rep, log is not None)
    if log is not None:
        log.extend(ph1.events)
    out = []
    for p2_design in p2_designs:
        p2 = None if p2_design is None else Phase2Design.parse(p2_design)
        ph2 = None
        if p2 is not None and ph1.state.complete:
            ph2 = run_phase2(scenario, p2, ph1.state.rp2ds, cfg, seed, rep, ph1.end,
                             log=log is not None, first_id=len(ph1.state.patients),
                             phase1_patients=ph1.state.patients)
            if log is not None:
                log.extend(ph2.events)
        out.append(_assemble(scenario, cfg, p1, rep, ph1, p2, ph2))
    return out


def parse_combo(token: str) -> tuple[Phase1Design, Optional[Phase2Design]]:
    """``boin+bop2`` style token; a bare Phase I name means Phase I only."""
    head, _, tail = token.strip().lower().partition("+")
    return Phase1Design.parse(head), (Phase2Design.parse(tail) if tail else None)


def all_combos() -> list[tuple[Phase1Design, Phase2Design]]:
    return [(a, b) for a in Phase1Design for b in Phase2Design]


def _work(args) -> list[dict]:
    scenario, p1, p2s, cfg, seed, reps = args
    rows = []
    for rep in reps:
        rows.extend(r.to_dict() for r in _run_combos(scenario, p1, p2s, cfg, seed, rep))
    return rows


def run_batch(scenarios: Sequence[Scenario], combos: Iterable, cfg: TrialConfig = TrialConfig(),
              reps: int = 1000, seed: int = 0, parallelism: int = 1,
              chunk: int = 100) -> list[ReplicationResult]:
    """Replicate every (scenario, combo); ordering is independent of ``parallelism``.

    Results come back grouped by scenario, then Phase I design, replication
    and Phase II design in the order the combos were given.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    groups: dict = {}
    for c in combos:
        p1, p2 = parse_combo(c) if isinstance(c, str) else (Phase1Design.parse(c[0]),
                                                            None if c[1] is None
                                                            else Phase2Design.parse(c[1]))
        groups.setdefault(p1, [])
        if p2 not in groups[p1]:
            groups[p1].append(p2)
    for p2s in groups.values():
        for p2 in p2s:
            if p2 is not None:
                schedule_for(p2, cfg)         # fail fast on calibration problems
    tasks = []
    for sc in scenarios:
        sc_cfg = cfg if cfg.n_doses == len(sc) else cfg.replace(n_doses=len(sc))
        for p1, p2s in groups.items():
            for lo in range(0, reps, chunk):
                tasks.append((sc, p1, tuple(p2s), sc_cfg, seed, range(lo, min(reps, lo + chunk))))
    if parallelism <= 1 or len(tasks) == 1:
        chunks = map(_work, tasks)
        rows = [r for c in chunks for r in c]
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            rows = [r for c in pool.map(_work, tasks) for r in c]
    return [ReplicationResult.from_dict(r) for r in rows]


def write_results(results: Sequence[ReplicationResult], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in results:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def read_results(path) -> list[ReplicationResult]:
    with open(path, encoding="utf-8") as fh:
        return [ReplicationResult.from_dict(json.loads(line)) for line in fh if line.strip()]


def write_event_log(events: Sequence[tuple], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t, kind, dose, pid in events:
            fh.write(json.dumps({"time": round(t, 6), "kind": kind, "dose": dose,
                                 "patient": pid}) + "\n")
