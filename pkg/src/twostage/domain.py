"""Domain types for two-stage Phase I/II trials.

Outcomes are the four joint toxicity/efficacy cells

    O1 = (no DLT, response)    O2 = (no DLT, no response)
    O3 = (DLT, response)       O4 = (DLT, no response)

and every dose is described by its marginal DLT probability ``p`` and
response probability ``q``.  Scenarios and trial configurations can be read
from INI files (``schema_version = 1``); the nine reference scenarios ship
with the package as ``scenario-1`` ... ``scenario-9``.
"""

from __future__ import annotations

import configparser
import dataclasses
import enum
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

SCHEMA_VERSION = 1
UTILITY_TOLERANCE = 0.1


class ScenarioError(ValueError):
    """Raised for malformed or inconsistent scenario / config files."""


class OutcomeCell(enum.IntEnum):
    O1 = 1  # no DLT, response
    O2 = 2  # no DLT, no response
    O3 = 3  # DLT, response
    O4 = 4  # DLT, no response

    @property
    def dlt(self) -> bool:
        return self in (OutcomeCell.O3, OutcomeCell.O4)

    @property
    def response(self) -> bool:
        return self in (OutcomeCell.O1, OutcomeCell.O3)

    @classmethod
    def from_events(cls, dlt: bool, response: bool) -> "OutcomeCell":
        if dlt:
            return cls.O3 if response else cls.O4
        return cls.O1 if response else cls.O2


TOX_CELLS = frozenset({3, 4})
EFF_CELLS = frozenset({1, 3})


@dataclass(frozen=True)
class UtilityWeights:
    u1: float = 100.0
    u2: float = 40.0
    u3: float = 60.0
    u4: float = 0.0

    def __post_init__(self):
        if self.u1 != 100 or self.u4 != 0:
            raise ValueError("utility weights require u1 = 100 and u4 = 0")
        for u in (self.u2, self.u3):
            if not 0 <= u <= 100:
                raise ValueError(f"utility weight {u} outside [0, 100]")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.u1, self.u2, self.u3, self.u4)


def _check_prob(x: float, what: str) -> None:
    if not (0.0 <= x <= 1.0) or math.isnan(x):
        raise ValueError(f"{what}={x} is not a probability")


def independent_cells(p: float, q: float) -> tuple[float, float, float, float]:
    """Cell probabilities (O1..O4) when DLT and response are independent."""
    return ((1 - p) * q, (1 - p) * (1 - q), p * q, p * (1 - q))


def expected_utility(p: float, q: float, w: UtilityWeights = UtilityWeights(),
                     joint: Optional[Sequence[float]] = None) -> float:
    """Expected utility ``sum_i pi_i * u_i`` of a dose.

    ``joint`` optionally gives the four cell probabilities; its margins must
    agree with ``p`` and ``q``.  Without it the cells are taken as
    independent, which does not matter when ``u2 + u3 = 100``.
    """
    _check_prob(p, "p")
    _check_prob(q, "q")
    if joint is None:
        cells = independent_cells(p, q)
    else:
        cells = tuple(float(c) for c in joint)
        if len(cells) != 4:
            raise ValueError("joint must have four cells")
        for c in cells:
            _check_prob(c, "cell probability")
        if abs(sum(cells) - 1) > 1e-9:
            raise ValueError("cell probabilities must sum to 1")
        if abs(cells[2] + cells[3] - p) > 1e-9 or abs(cells[0] + cells[2] - q) > 1e-9:
            raise ValueError("joint margins disagree with (p, q)")
    return sum(c * u for c, u in zip(cells, w.as_tuple()))


@dataclass(frozen=True)
class DoseProfile:
    dose_index: int
    tox_prob: float
    eff_prob: float
    utility: float


@dataclass(frozen=True)
class Scenario:
    name: str
    doses: tuple[DoseProfile, ...]
    true_obd: Optional[int] = None
    true_mtd: Optional[int] = None
    description: str = ""

    def __post_init__(self):
        if not self.doses:
            raise ScenarioError(f"{self.name}: no doses")
        for i, d in enumerate(self.doses, start=1):
            if d.dose_index != i:
                raise ScenarioError(f"{self.name}: dose indices must run 1..D")
            _check_prob(d.tox_prob, "toxicity")
            _check_prob(d.eff_prob, "efficacy")
        tox = self.tox
        if any(b <= a for a, b in zip(tox, tox[1:])):
            raise ScenarioError(f"{self.name}: toxicity must be strictly increasing, got {tox}")

    @property
    def tox(self) -> tuple[float, ...]:
        return tuple(d.tox_prob for d in self.doses)

    @property
    def eff(self) -> tuple[float, ...]:
        return tuple(d.eff_prob for d in self.doses)

    @property
    def utilities(self) -> tuple[float, ...]:
        return tuple(d.utility for d in self.doses)

    def __len__(self):
        return len(self.doses)

    @classmethod
    def from_probabilities(cls, name: str, tox: Sequence[float], eff: Sequence[float],
                           w: UtilityWeights = UtilityWeights(), **kw) -> "Scenario":
        if len(tox) != len(eff):
            raise ScenarioError("toxicity and efficacy lengths differ")
        doses = tuple(DoseProfile(i, t, e, expected_utility(t, e, w))
                      for i, (t, e) in enumerate(zip(tox, eff), start=1))
        return cls(name, doses, **kw)


@dataclass(frozen=True)
class TrialConfig:
    """Design constants.  Defaults reproduce the reference simulation study.

    Counts are per trial; times are in days.  ``phi1``/``phi2`` default to
    0.6 and 1.4 times the target.
    """

    n_doses: int = 6                    # D1
    max_rp2d: int = 2                   # D2
    cohort_size: int = 3                # n_c
    max_cohorts: int = 15               # C
    arm_size: int = 40                  # M
    interim_sizes: tuple[int, ...] = (10, 20, 30)
    efficacy_looks: tuple[int, ...] = (20,)
    target: float = 0.35                # phi
    phi1: Optional[float] = None
    phi2: Optional[float] = None
    tox_limit: float = 0.35             # p_T
    eff_limit: float = 0.25             # q_E
    safety_cutoff: float = 0.95         # eta
    futility_cutoff: float = 0.90       # zeta
    rds_sample_cutoff: int = 6          # N*
    min_n_safety: int = 3
    min_n_futility: int = 6
    safety_threshold: str = "lambda_d"  # or "target"
    untried_rds: str = "max"            # or "escalate" / "prior"
    mtd_guard: Optional[float] = 0.7     # None: plain closest-to-target MTD
    obd_selection: str = "boin12"       # or "observed"
    backfill_cap: int = 12
    backfill_rule: str = "cohort"       # or "elimination"
    accrual_rate_s1: float = 0.1
    accrual_rate_s2: float = 0.2
    accrual: str = "poisson"            # or "fixed"
    tox_window: float = 30.0
    eff_window: float = 90.0
    event_time: str = "uniform"         # or "weibull"
    weibull_shape: float = 2.0
    pending_fraction_limit: float = 0.5
    p_null: float = 0.40
    p_alt: float = 0.20
    q_null: float = 0.15
    q_alt: float = 0.35
    type1_alpha: float = 0.20
    pool_phase1_data: bool = False
    weights: UtilityWeights = field(default_factory=UtilityWeights)

    def __post_init__(self):
        if self.phi1 is None:
            object.__setattr__(self, "phi1", round(0.6 * self.target, 10))
        if self.phi2 is None:
            object.__setattr__(self, "phi2", round(1.4 * self.target, 10))
        if not 0 < self.phi1 < self.target < self.phi2 < 1:
            raise ValueError("need 0 < phi1 < target < phi2 < 1")
        if not self.p_alt < self.p_null:
            raise ValueError("need p_alt < p_null")
        if not self.q_null < self.q_alt:
            raise ValueError("need q_null < q_alt")
        sizes = tuple(self.interim_sizes) + (self.arm_size,)
        if any(b <= a for a, b in zip(sizes, sizes[1:])) or sizes[0] <= 0:
            raise ValueError("interim sizes must increase strictly below arm_size")
        if any(m not in self.interim_sizes for m in self.efficacy_looks):
            raise ValueError("efficacy looks must be interim sizes")
        if min(self.n_doses, self.max_rp2d, self.cohort_size, self.max_cohorts) < 1:
            raise ValueError("counts must be positive")
        if self.safety_threshold not in ("lambda_d", "target"):
            raise ValueError("safety_threshold must be 'lambda_d' or 'target'")
        if self.untried_rds not in ("max", "escalate", "prior"):
            raise ValueError("untried_rds must be 'max', 'escalate' or 'prior'")
        if self.obd_selection not in ("observed", "boin12"):
            raise ValueError("obd_selection must be 'observed' or 'boin12'")
        if self.mtd_guard is not None and not 0 < self.mtd_guard <= 1:
            raise ValueError("mtd_guard must lie in (0, 1]")
        if self.backfill_rule not in ("cohort", "elimination"):
            raise ValueError("backfill_rule must be 'cohort' or 'elimination'")
        if self.accrual not in ("poisson", "fixed"):
            raise ValueError("accrual must be 'poisson' or 'fixed'")
        if self.event_time not in ("uniform", "weibull"):
            raise ValueError("event_time must be 'uniform' or 'weibull'")

    @property
    def n1(self) -> int:
        return self.cohort_size * self.max_cohorts

    @property
    def n2(self) -> int:
        return self.max_rp2d * self.arm_size

    @property
    def look_sizes(self) -> tuple[int, ...]:
        return tuple(self.interim_sizes) + (self.arm_size,)

    def replace(self, **changes) -> "TrialConfig":
        # brackets still at their derived values follow a new target
        if "target" in changes:
            for name, k in (("phi1", 0.6), ("phi2", 1.4)):
                if name not in changes and getattr(self, name) == round(k * self.target, 10):
                    changes[name] = None
        return dataclasses.replace(self, **changes)


@dataclass
class PatientRecord:
    id: int
    dose: int
    arrival: float
    tox_event: bool
    tox_time: Optional[float]
    eff_event: bool
    eff_time: Optional[float]
    source: str = "escalation"          # escalation | backfill | phase2
    cohort: int = 0

    def tox_resolution(self, window: float) -> float:
        """Calendar day on which the toxicity outcome becomes known."""
        return self.arrival + (self.tox_time if self.tox_event else window)

    def eff_resolution(self, window: float) -> float:
        return self.arrival + (self.eff_time if self.eff_event else window)

    @property
    def cell(self) -> OutcomeCell:
        return OutcomeCell.from_events(self.tox_event, self.eff_event)


class CountTable:
    """Per-dose counts of the four outcome cells (1-based dose index)."""

    def __init__(self, n_doses: int):
        self.cells = [[0, 0, 0, 0] for _ in range(n_doses)]

    def add(self, dose: int, cell: int, k: int = 1) -> None:
        self.cells[dose - 1][cell - 1] += k

    def n(self, dose: int) -> int:
        return sum(self.cells[dose - 1])

    def n_tox(self, dose: int) -> int:
        c = self.cells[dose - 1]
        return c[2] + c[3]

    def n_eff(self, dose: int) -> int:
        c = self.cells[dose - 1]
        return c[0] + c[2]

    def p_hat(self, dose: int) -> Optional[float]:
        n = self.n(dose)
        return self.n_tox(dose) / n if n else None

    def q_hat(self, dose: int) -> Optional[float]:
        n = self.n(dose)
        return self.n_eff(dose) / n if n else None

    def check(self) -> None:
        for d in range(1, len(self.cells) + 1):
            c = self.cells[d - 1]
            assert min(c) >= 0
            assert self.n(d) == c[0] + c[1] + c[2] + c[3]
            assert self.n_tox(d) + (c[0] + c[1]) == self.n(d)
            assert self.n_eff(d) + (c[1] + c[3]) == self.n(d)

    @classmethod
    def from_patients(cls, patients: Iterable[PatientRecord], n_doses: int) -> "CountTable":
        table = cls(n_doses)
        for pt in patients:
            table.add(pt.dose, int(pt.cell))
        return table


@dataclass(frozen=True)
class Classification:
    obd: Optional[int]
    mtd: Optional[int]
    toxic: frozenset
    admissible: frozenset


def classify_scenario(s: Scenario, cfg: TrialConfig = TrialConfig()) -> Classification:
    """True OBD / MTD and the toxic and admissible dose sets of a scenario."""
    toxic = frozenset(d.dose_index for d in s.doses if d.tox_prob > cfg.tox_limit)
    admissible = frozenset(d.dose_index for d in s.doses
                           if d.tox_prob <= cfg.tox_limit and d.eff_prob >= cfg.eff_limit)
    safe = [d for d in s.doses if d.tox_prob <= cfg.tox_limit]
    mtd = max(safe, key=lambda d: d.tox_prob).dose_index if safe else None
    obd = None
    if admissible:
        # utilities recomputed from (p, q) so ties are not an artefact of rounding
        best = max(expected_utility(s.doses[d - 1].tox_prob, s.doses[d - 1].eff_prob, cfg.weights)
                   for d in admissible)
        obd = min(d for d in admissible
                  if expected_utility(s.doses[d - 1].tox_prob, s.doses[d - 1].eff_prob,
                                      cfg.weights) >= best - 1e-12)
    return Classification(obd, mtd, toxic, admissible)


# ---------------------------------------------------------------- file I/O

def _floats(text: str, key: str) -> list[float]:
    try:
        return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]
    except ValueError as exc:
        raise ScenarioError(f"cannot parse {key}: {text!r}") from exc


def _optional_dose(text: Optional[str]) -> Optional[int]:
    if text is None or text.strip().lower() in ("", "none", "na"):
        return None
    try:
        return int(text)
    except ValueError as exc:
        raise ScenarioError(f"bad dose label {text!r}") from exc


def parse_scenario(text: str, w: UtilityWeights = UtilityWeights(),
                   cfg: TrialConfig = TrialConfig()) -> Scenario:
    """Parse one scenario document and validate it.

    Utilities are recomputed from (p, q, w); a stored utility that differs by
    more than 0.1 is an error.  Stored OBD/MTD labels are cross-checked.
    """
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ScenarioError(f"parse error: {exc}") from exc
    if not cp.has_section("scenario") or not cp.has_section("doses"):
        raise ScenarioError("scenario file needs [scenario] and [doses] sections")
    head, body = cp["scenario"], cp["doses"]
    version = head.get("schema_version")
    if version is None or int(version) != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported schema_version {version!r}")
    if "toxicity" not in body or "efficacy" not in body:
        raise ScenarioError("[doses] needs toxicity and efficacy")
    tox = _floats(body["toxicity"], "toxicity")
    eff = _floats(body["efficacy"], "efficacy")
    if len(tox) != len(eff):
        raise ScenarioError("toxicity and efficacy lengths differ")
    name = head.get("name", "unnamed")
    scen = Scenario.from_probabilities(name, tox, eff, w,
                                       description=head.get("description", ""))
    if "utility" in body:
        stored = _floats(body["utility"], "utility")
        if len(stored) != len(tox):
            raise ScenarioError("utility length differs from toxicity")
        for d, u in zip(scen.doses, stored):
            if abs(d.utility - u) > UTILITY_TOLERANCE:
                raise ScenarioError(f"{name}: dose {d.dose_index} utility {u} != {d.utility:.2f}")
        # keep the recomputed values; stored ones are rounded
    cls = classify_scenario(scen, cfg)
    for key, truth in (("true_obd", cls.obd), ("true_mtd", cls.mtd)):
        if key in head:
            label = _optional_dose(head[key])
            if label != truth:
                raise ScenarioError(f"{name}: {key} = {label} but data imply {truth}")
    return dataclasses.replace(scen, true_obd=cls.obd, true_mtd=cls.mtd)


def load_scenarios(source) -> list[Scenario]:
    """Load scenarios from a path, a directory of ``*.ini`` files or raw text."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        path = Path(source)
        if path.is_dir():
            return [parse_scenario(p.read_text()) for p in sorted(path.glob("*.ini"))]
        return [parse_scenario(path.read_text())]
    return [parse_scenario(source)]


def bundled_scenario_names() -> list[str]:
    return [f"scenario-{i}" for i in range(1, 10)]


def bundled_scenario(name: str | int) -> Scenario:
    if isinstance(name, int) or str(name).isdigit():
        name = f"scenario-{int(name)}"
    try:
        text = resources.files("twostage").joinpath("scenarios", f"{name}.ini").read_text()
    except FileNotFoundError as exc:
        raise ScenarioError(f"no bundled scenario {name!r}") from exc
    return parse_scenario(text)


def bundled_scenarios() -> list[Scenario]:
    return [bundled_scenario(n) for n in bundled_scenario_names()]


_CONFIG_FIELDS = {f.name: f for f in dataclasses.fields(TrialConfig)}


_OPTIONAL_FIELDS = ("phi1", "phi2", "mtd_guard")


def _coerce(name: str, raw: str):
    default = getattr(TrialConfig(), name)
    if name == "weights":
        u2, u3 = _floats(raw, name)
        return UtilityWeights(u2=u2, u3=u3)
    if raw.strip().lower() == "none" and name in _OPTIONAL_FIELDS:
        return None
    if isinstance(default, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, tuple):
        return tuple(int(x) for x in _floats(raw, name))
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float) or default is None:
        return float(raw)
    return raw.strip()


def config_overrides(values: Mapping[str, str]) -> dict:
    """Convert string overrides (from a file or the command line) to typed values."""
    out = {}
    for key, raw in values.items():
        key = key.strip().replace("-", "_")
        if key == "schema_version":
            continue
        if key not in _CONFIG_FIELDS:
            raise ScenarioError(f"unknown config key {key!r}")
        try:
            out[key] = _coerce(key, str(raw))
        except ValueError as exc:
            raise ScenarioError(f"bad value for {key}: {raw!r}") from exc
    return out


def load_config(path, base: TrialConfig = TrialConfig()) -> TrialConfig:
    """Read a ``[trial]`` section of overrides on top of ``base``."""
    cp = configparser.ConfigParser()
    try:
        cp.read_string(Path(path).read_text())
    except configparser.Error as exc:
        raise ScenarioError(f"parse error: {exc}") from exc
    if not cp.has_section("trial"):
        raise ScenarioError("config file needs a [trial] section")
    section = dict(cp["trial"])
    version = section.get("schema_version")
    if version is None or int(version) != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported schema_version {version!r}")
    try:
        return base.replace(**config_overrides(section))
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc
