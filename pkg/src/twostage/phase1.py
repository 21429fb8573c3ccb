"""Phase I dose-finding: BOIN, TITE-BOIN, BF-BOIN, BOIN12 and TITE-BOIN12.

All five designs share one decision interface, :func:`step`, which looks at
a :class:`Phase1State` (enrolled patients plus the calendar clock) and says
what to do with the patient who is ready to enrol now: assign them to the
escalation cohort, backfill them, hold them until accrual reopens, stop the
trial, or close Phase I with a list of recommended Phase II doses.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

from .bayes import beta_sf, pava_isotonic
from .domain import PatientRecord, TrialConfig, UtilityWeights, independent_cells


class Phase1Design(enum.Enum):
    BOIN = "boin"
    TITE_BOIN = "tite-boin"
    BF_BOIN = "bf-boin"
    BOIN12 = "boin12"
    TITE_BOIN12 = "tite-boin12"

    @property
    def tite(self) -> bool:
        return self in (Phase1Design.TITE_BOIN, Phase1Design.TITE_BOIN12)

    @property
    def obd(self) -> bool:
        return self in (Phase1Design.BOIN12, Phase1Design.TITE_BOIN12)

    @property
    def backfill(self) -> bool:
        return self is Phase1Design.BF_BOIN

    @property
    def label(self) -> str:
        return self.value.upper()

    @classmethod
    def parse(cls, token: Union[str, "Phase1Design"]) -> "Phase1Design":
        if isinstance(token, cls):
            return token
        try:
            return cls(str(token).strip().lower())
        except ValueError:
            raise ValueError(f"unknown Phase I design {token!r}; "
                             f"choose from {[d.value for d in cls]}") from None


class Decision(enum.Enum):
    ESCALATE = "escalate"
    STAY = "stay"
    DEESCALATE = "deescalate"


class NoInformation(ValueError):
    """Every patient at the dose is pending with zero follow-up."""


@dataclass(frozen=True)
class BoinBoundaries:
    lambda_e: float
    lambda_d: float


def boin_boundaries(phi: float, phi1: float, phi2: float) -> BoinBoundaries:
    if not 0 < phi1 < phi < phi2 < 1:
        raise ValueError(f"need 0 < phi1 < phi < phi2 < 1, got ({phi1}, {phi}, {phi2})")
    lam_e = math.log((1 - phi1) / (1 - phi)) / math.log(phi * (1 - phi1) / (phi1 * (1 - phi)))
    lam_d = math.log((1 - phi) / (1 - phi2)) / math.log(phi2 * (1 - phi) / (phi * (1 - phi2)))
    return BoinBoundaries(lam_e, lam_d)


def config_boundaries(cfg: TrialConfig) -> BoinBoundaries:
    return boin_boundaries(cfg.target, cfg.phi1, cfg.phi2)


def boin_decision(b: BoinBoundaries, p_hat: float) -> Decision:
    if p_hat >= b.lambda_d:
        return Decision.DEESCALATE
    if p_hat <= b.lambda_e:
        return Decision.ESCALATE
    return Decision.STAY


def safety_eliminate(n_tox: float, n: float, eta: float, threshold: float,
                     min_n: float = 3) -> bool:
    """True when Pr(p > threshold | data) > eta under a Beta(1, 1) prior."""
    if n < min_n:
        return False
    return beta_sf(1.0 + n_tox, 1.0 + n - n_tox, threshold) > eta


def futility_eliminate(n_resp: float, n: float, q_min: float, zeta: float,
                       min_n: float = 6) -> bool:
    """True when Pr(q < q_min | data) > zeta under a Beta(1, 1) prior."""
    if n < min_n:
        return False
    return 1.0 - beta_sf(1.0 + n_resp, 1.0 + n - n_resp, q_min) > zeta


def tite_effective_rate(n_events: int, n_complete_without: int,
                        pending_followup: Sequence[float], window: float) -> float:
    """Observed event rate with pending patients counted by follow-up fraction.

    ``pending_followup`` lists the days of follow-up of patients still in
    their window without an event.
    """
    for f in pending_followup:
        if not 0 <= f <= window:
            raise ValueError(f"follow-up {f} outside [0, {window}]")
    effective = n_complete_without + sum(f / window for f in pending_followup)
    denom = n_events + effective
    if denom <= 0:
        raise NoInformation("no follow-up information at this dose")
    return n_events / denom


def accrual_gate(pending: int, total: int, limit: float = 0.5) -> bool:
    """True means suspend accrual."""
    if total == 0:
        return False
    return pending / total > limit


def utility_benchmark(cfg: TrialConfig) -> float:
    """Utility of a dose sitting exactly on both admissibility limits."""
    cells = independent_cells(cfg.tox_limit, cfg.eff_limit)
    return sum(c * u for c, u in zip(cells, cfg.weights.as_tuple()))


def rds_score(cells: Sequence[float], w: UtilityWeights, benchmark: float) -> float:
    """Posterior Pr(standardized utility > benchmark/100), quasi-binomial Beta(1,1) model."""
    n = sum(cells)
    x = sum(c * u for c, u in zip(cells, w.as_tuple())) / 100.0
    return beta_sf(1.0 + x, 1.0 + n - x, benchmark / 100.0)


# ------------------------------------------------------------------ state

@dataclass
class DoseData:
    """Data at one dose as seen on a given day."""
    enrolled: int = 0
    n_tox: float = 0.0          # observed DLTs
    tox_info: float = 0.0       # DLTs + effective number of DLT-free patients
    n_resp: float = 0.0
    eff_info: float = 0.0
    cells: list = field(default_factory=lambda: [0.0, 0.0, 0.0, 0.0])
    pending: int = 0
    esc_resp: int = 0           # observed responses among escalation patients

    @property
    def p_hat(self) -> float:
        if self.tox_info <= 0:
            raise NoInformation("no toxicity information")
        return self.n_tox / self.tox_info

    def utility(self, w: UtilityWeights) -> float:
        n = sum(self.cells)
        return sum(c * u for c, u in zip(self.cells, w.as_tuple())) / n


@dataclass
class AssignCohort:
    dose: int


@dataclass
class Backfill:
    dose: int


@dataclass
class SuspendUntil:
    time: float


@dataclass
class TerminateTrial:
    pass


@dataclass
class CompletePhase:
    rp2ds: tuple[int, ...]


Phase1Action = Union[AssignCohort, Backfill, SuspendUntil, TerminateTrial, CompletePhase]


@dataclass
class Phase1State:
    design: Phase1Design
    cfg: TrialConfig
    patients: list = field(default_factory=list)
    clock: float = 0.0
    current_dose: int = 1
    cohorts_started: int = 0
    cohort_filled: int = 0
    eliminated_from: Optional[int] = None   # lowest safety-eliminated dose
    futile: set = field(default_factory=set)
    cleared: set = field(default_factory=set)
    terminated: bool = False
    complete: bool = False
    rp2ds: tuple = ()
    trace: list = field(default_factory=list)
    eliminations: list = field(default_factory=list)   # (patients enrolled so far, lowest eliminated dose)

    def __post_init__(self):
        self.design = Phase1Design.parse(self.design)
        if self.eliminated_from is None:
            self.eliminated_from = self.cfg.n_doses + 1

    def add(self, patient: PatientRecord) -> None:
        if patient.source == "escalation":
            patient.cohort = self.cohorts_started
            self.cohort_filled += 1
        self.patients.append(patient)
        self.trace.append((patient.id, patient.dose, patient.source))

    def is_eliminated(self, dose: int) -> bool:
        return dose >= self.eliminated_from

    @property
    def needs_efficacy(self) -> bool:
        return self.design.obd

    def resolution_time(self, p: PatientRecord) -> float:
        """Day on which every outcome this design waits for is known."""
        cfg = self.cfg
        t = p.tox_resolution(cfg.tox_window)
        if self.needs_efficacy:
            t = max(t, p.eff_resolution(cfg.eff_window))
        return t

    def dose_data(self, t: Optional[float] = None) -> list[DoseData]:
        """Per-dose data visible on day ``t`` (index 0 is dose 1).

        Non-TITE designs use resolved outcomes only; TITE designs also count
        pending patients by their follow-up fraction.
        """
        t = self.clock if t is None else t
        cfg = self.cfg
        tite = self.design.tite
        wt, we = cfg.tox_window, cfg.eff_window
        obd = self.needs_efficacy
        data = [DoseData() for _ in range(cfg.n_doses)]
        for p in self.patients:
            dd = data[p.dose - 1]
            dd.enrolled += 1
            pending = False
            fu = t - p.arrival
            if p.tox_event and p.tox_time <= fu:
                t1, t0 = 1.0, 0.0
            elif fu >= wt:
                t1, t0 = 0.0, 1.0
            else:
                t1, t0 = 0.0, (fu / wt if tite else 0.0)
                pending = True
            if p.eff_event and p.eff_time <= fu:
                e1, e0 = 1.0, 0.0
                if p.source == "escalation":
                    dd.esc_resp += 1
            elif fu >= we:
                e1, e0 = 0.0, 1.0
            else:
                e1, e0 = 0.0, (fu / we if tite else 0.0)
                pending = pending or obd
            dd.n_tox += t1
            dd.tox_info += t1 + t0
            dd.n_resp += e1
            dd.eff_info += e1 + e0
            c = dd.cells
            c[0] += t0 * e1
            c[1] += t0 * e0
            c[2] += t1 * e1
            c[3] += t1 * e0
            if pending:
                dd.pending += 1
        return data

    def counts(self):
        """Outcome cells of all enrolled patients (full follow-up)."""
        from .domain import CountTable
        return CountTable.from_patients(self.patients, self.cfg.n_doses)


# ------------------------------------------------------------------ rules

def backfill_candidate(state: Phase1State, data: Optional[list] = None) -> Optional[int]:
    """Highest cleared dose below the escalation dose that showed a response."""
    cfg = state.cfg
    data = state.dose_data() if data is None else data
    for d in range(state.current_dose - 1, 0, -1):
        if state.is_eliminated(d):
            continue
        dd = data[d - 1]
        if cfg.backfill_rule == "cohort":
            cleared = d in state.cleared
        else:
            cleared = dd.enrolled > 0
        if cleared and dd.esc_resp >= 1 and dd.enrolled < cfg.backfill_cap:
            return d
    return None


def rds_rank(data: Sequence[DoseData], admissible: Sequence[int], cfg: TrialConfig,
             benchmark: Optional[float] = None, explore: Optional[bool] = None) -> int:
    """Dose in ``admissible`` with the largest desirability score.

    Untried doses rank first when ``explore`` is true (default: whenever
    ``cfg.untried_rds`` is not "prior"); otherwise they score on the prior
    alone.  Ties go to the less-explored dose, then to the lower dose.
    """
    if explore is None:
        explore = cfg.untried_rds != "prior"
    if not admissible:
        raise ValueError("empty admissible set")
    u_b = utility_benchmark(cfg) if benchmark is None else benchmark

    def key(d):
        dd = data[d - 1]
        info = sum(dd.cells)
        if dd.enrolled == 0 or info <= 0:
            score = math.inf if explore else rds_score((0, 0, 0, 0), cfg.weights, u_b)
        else:
            score = rds_score(dd.cells, cfg.weights, u_b)
        return (-score, dd.enrolled, d)

    return min(admissible, key=key)


def _safety_threshold(cfg: TrialConfig, b: BoinBoundaries) -> float:
    return b.lambda_d if cfg.safety_threshold == "lambda_d" else cfg.target


def _next_dose(state: Phase1State, data: list) -> Optional[int]:
    """Dose for the next cohort, or None when no safe/active dose is left.

    Applies the safety (and for BOIN12 designs futility) rule to the current
    dose first; those updates are written into ``state``.
    """
    cfg = state.cfg
    design = state.design
    b = config_boundaries(cfg)
    d = state.current_dose
    dd = data[d - 1]
    if safety_eliminate(dd.n_tox, dd.tox_info, cfg.safety_cutoff,
                        _safety_threshold(cfg, b), cfg.min_n_safety):
        if d < state.eliminated_from:
            state.eliminated_from = d
            state.eliminations.append((len(state.patients), d))
    if design.obd and futility_eliminate(dd.n_resp, dd.eff_info, cfg.eff_limit,
                                         cfg.futility_cutoff, cfg.min_n_futility):
        state.futile.add(d)

    D = cfg.n_doses
    if design.obd:
        available = [x for x in range(1, D + 1)
                     if not state.is_eliminated(x) and x not in state.futile]
        if not available:
            return None
    if state.is_eliminated(d):
        return d - 1 if d > 1 else None

    signal = boin_decision(b, dd.p_hat)
    if signal is not Decision.DEESCALATE:
        state.cleared.add(d)
    if signal is Decision.DEESCALATE:
        return max(d - 1, 1)
    if not design.obd:
        if signal is Decision.ESCALATE and d < D and not state.is_eliminated(d + 1):
            return d + 1
        return d

    if signal is Decision.STAY and dd.enrolled >= cfg.rds_sample_cutoff:
        candidates = (d - 1, d)
    else:
        candidates = (d - 1, d, d + 1)
    admissible = [x for x in candidates if x in available]
    if admissible:
        explore = (cfg.untried_rds == "max"
                   or (cfg.untried_rds == "escalate" and signal is Decision.ESCALATE))
        return rds_rank(data, admissible, cfg, explore=explore)
    # nothing admissible next door: move one step towards the nearest active dose
    target = min(available, key=lambda x: (abs(x - d), x))
    return d + 1 if target > d else d - 1


def step(design: Union[str, Phase1Design], state: Phase1State) -> Phase1Action:
    """Next action for the patient who is ready at ``state.clock``.

    Starting a new cohort updates ``state`` (dose, cohort counter and any
    eliminations); the caller enrols patients with :meth:`Phase1State.add`.
    """
    design = Phase1Design.parse(design)
    if design is not state.design:
        raise ValueError("state was built for a different design")
    if state.terminated or state.complete:
        raise RuntimeError("Phase I already finished")
    cfg = state.cfg
    t = state.clock
    esc = [p for p in state.patients if p.source == "escalation"]
    if len(esc) > state.cohorts_started * cfg.cohort_size:
        raise RuntimeError("inconsistent state: more escalation patients than cohort slots")

    if state.cohorts_started == 0:
        return _start_cohort(state, 1)
    if state.cohort_filled < cfg.cohort_size:
        return AssignCohort(state.current_dose)

    cohort = [p for p in esc if p.cohort == state.cohorts_started]
    cohort_done = max(state.resolution_time(p) for p in cohort)
    last = state.cohorts_started == cfg.max_cohorts

    if not design.tite or last:
        if t < cohort_done:
            if design.backfill:
                cand = backfill_candidate(state)
                if cand is not None:
                    return Backfill(cand)
            return SuspendUntil(cohort_done)
    if last:
        everyone = max(state.resolution_time(p) for p in state.patients)
        if t < everyone:
            return SuspendUntil(everyone)
        state.complete = True
        state.rp2ds = select_rp2ds(design, state)
        if not state.rp2ds:
            state.complete = False
            state.terminated = True
            return TerminateTrial()
        return CompletePhase(state.rp2ds)

    if design.tite:
        opens = gate_open_time(state, t)
        if opens > t:
            return SuspendUntil(opens)

    data = state.dose_data(t)
    nxt = _next_dose(state, data)
    if nxt is None:
        state.terminated = True
        return TerminateTrial()
    return _start_cohort(state, nxt)


def _start_cohort(state: Phase1State, dose: int) -> AssignCohort:
    state.current_dose = dose
    state.cohorts_started += 1
    state.cohort_filled = 0
    return AssignCohort(dose)


def gate_open_time(state: Phase1State, t: float) -> float:
    """Earliest day >= t on which the pending share at the current dose is within limit."""
    cfg = state.cfg
    at_dose = [p for p in state.patients if p.dose == state.current_dose]
    pending = sorted(r for r in (state.resolution_time(p) for p in at_dose) if r > t)
    if not accrual_gate(len(pending), len(at_dose), cfg.pending_fraction_limit):
        return t
    allowed = math.floor(cfg.pending_fraction_limit * len(at_dose) + 1e-12)
    return pending[len(pending) - allowed - 1]


# ------------------------------------------------------------------ selection

def select_mtd(data: Sequence[DoseData], eliminated_from: int, target: float,
               guard: Optional[float] = None) -> Optional[int]:
    """Dose whose isotonic DLT estimate is closest to the target.

    With ``guard`` set, only doses with Pr(p > target | data) <= guard are
    candidates (the lowest tried dose if none qualifies).
    """
    tried = [d for d in range(1, eliminated_from) if data[d - 1].tox_info > 0]
    if not tried:
        return None
    raw = [data[d - 1].n_tox / data[d - 1].tox_info for d in tried]
    fit = pava_isotonic(raw, [data[d - 1].tox_info for d in tried])
    pool = list(zip(tried, fit))
    if guard is not None:
        pool = [(d, e) for d, e in pool
                if beta_sf(1.0 + data[d - 1].n_tox,
                           1.0 + data[d - 1].tox_info - data[d - 1].n_tox, target) <= guard]
        if not pool:
            return tried[0]
    best = None
    for d, est in pool:
        gap = abs(est - target)
        if best is None or gap < best[0] - 1e-12:
            best = (gap, d, est)
        elif abs(gap - best[0]) <= 1e-12:
            # equal distance: above target prefer the lower dose, below it the higher
            if est < target:
                best = (gap, d, est)
    return best[1]


def _admissible_at_end(d: int, dd: DoseData, cfg: TrialConfig) -> bool:
    if dd.enrolled == 0:
        return False
    unsafe = beta_sf(1.0 + dd.n_tox, 1.0 + dd.tox_info - dd.n_tox, cfg.target) > cfg.safety_cutoff
    futile = 1.0 - beta_sf(1.0 + dd.n_resp, 1.0 + dd.eff_info - dd.n_resp,
                           cfg.eff_limit) > cfg.futility_cutoff
    return not (unsafe or futile)


def select_rp2ds(design: Union[str, Phase1Design], state: Phase1State) -> tuple[int, ...]:
    """Recommended Phase II doses, ascending; empty when Phase I stopped.

    MTD designs recommend the MTD and the dose below it.  OBD designs pick
    the best dose by utility and pair it with the better of its neighbours;
    ``cfg.obd_selection`` chooses between ranking all surviving doses by
    observed utility ("observed") and the BOIN12 end-of-trial rule
    ("boin12": admissible doses at or below the estimated MTD, ranked by the
    posterior mean of the quasi-binomial utility).
    """
    design = Phase1Design.parse(design)
    cfg = state.cfg
    if state.terminated:
        return ()
    data = state.dose_data(math.inf)
    if not design.obd:
        mtd = select_mtd(data, state.eliminated_from, cfg.target, cfg.mtd_guard)
        if mtd is None:
            return ()
        picks = (mtd - 1, mtd) if mtd > 1 else (mtd,)
        return picks[-cfg.max_rp2d:]

    def surviving(d):
        return (1 <= d <= cfg.n_doses and not state.is_eliminated(d)
                and d not in state.futile and data[d - 1].enrolled > 0)

    if cfg.obd_selection == "observed":
        ok = [d for d in range(1, cfg.n_doses + 1) if surviving(d)]
        pool = ok
        util = {d: data[d - 1].utility(cfg.weights) for d in ok}
    else:
        ok = [d for d in range(1, cfg.n_doses + 1)
              if surviving(d) and _admissible_at_end(d, data[d - 1], cfg)]
        mtd = select_mtd(data, state.eliminated_from, cfg.target)
        pool = [d for d in ok if mtd is not None and d <= mtd]
        util = {}
        for d in ok:
            dd = data[d - 1]
            x = sum(c * u for c, u in zip(dd.cells, cfg.weights.as_tuple())) / 100.0
            util[d] = (1.0 + x) / (2.0 + sum(dd.cells))
    if not pool:
        return ()
    best = min(pool, key=lambda d: (-util[d], d))
    if cfg.max_rp2d < 2:
        return (best,)
    near = [x for x in (best - 1, best + 1) if x in ok]
    if not near:
        return (best,)
    mate = min(near, key=lambda d: (-util[d], d))
    return tuple(sorted((best, mate)))


def decision_table(b: BoinBoundaries, n_max: int, eta: float, threshold: float,
                   min_n: int = 3) -> list[tuple]:
    """Rows (n, max DLTs to escalate, min DLTs to de-escalate, min DLTs to eliminate)."""
    rows = []
    for n in range(1, n_max + 1):
        esc = max((k for k in range(n + 1) if k / n <= b.lambda_e), default=None)
        de = min((k for k in range(n + 1) if k / n >= b.lambda_d), default=None)
        elim = None
        if n >= min_n:
            elim = min((k for k in range(n + 1)
                        if safety_eliminate(k, n, eta, threshold, min_n)), default=None)
        rows.append((n, esc, de, elim))
    return rows
