"""Phase II go/no-go monitoring (TS, BOP2, TOP), cutoff calibration, RP3D choice.

Each recommended Phase II dose is run as its own arm.  At every look the arm
is dropped ("no-go") when

    Pr(p > p_null | data) > C_T(m)   or   Pr(q <= q_null | data) > C_E(m)

and an arm that survives the final look gets a "go".  TS uses independent
Beta(1, 1) posteriors and fixed cutoffs; BOP2 and TOP use a Dirichlet prior
on the four outcome cells (mass 1, centred on the null) and power-function
cutoffs ``C(m) = 1 - lam * (m / M) ** gam``.  TOP additionally looks before
all outcomes are in, counting pending patients by follow-up fraction.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence, Union

import numpy as np

from .bayes import beta_sf
from .domain import PatientRecord, TrialConfig, UtilityWeights, independent_cells

LAMBDA_GRID = tuple(round(0.5 + 0.01 * i, 2) for i in range(51))
GAMMA_GRID = tuple(0.25 * i for i in range(13))


class Phase2Design(enum.Enum):
    TS = "ts"
    BOP2 = "bop2"
    TOP = "top"

    @property
    def label(self) -> str:
        return self.value.upper()

    @property
    def tite(self) -> bool:
        return self is Phase2Design.TOP

    @classmethod
    def parse(cls, token) -> "Phase2Design":
        if isinstance(token, cls):
            return token
        try:
            return cls(str(token).strip().lower())
        except ValueError:
            raise ValueError(f"unknown Phase II design {token!r}; "
                             f"choose from {[d.value for d in cls]}") from None


class Margin(enum.Enum):
    TOX = "tox"
    EFF = "eff"


class LookResult(enum.Enum):
    CONTINUE = "continue"
    NOGO = "nogo"


class ArmStatus(enum.Enum):
    ACTIVE = "active"
    NOGO = "nogo"
    GO = "go"


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Hypotheses:
    p_null: float = 0.40
    p_alt: float = 0.20
    q_null: float = 0.15
    q_alt: float = 0.35

    def __post_init__(self):
        if not self.p_alt < self.p_null:
            raise ValueError("need p_alt < p_null")
        if not self.q_null < self.q_alt:
            raise ValueError("need q_null < q_alt")

    @classmethod
    def from_config(cls, cfg: TrialConfig) -> "Hypotheses":
        return cls(cfg.p_null, cfg.p_alt, cfg.q_null, cfg.q_alt)


@dataclass(frozen=True)
class CutoffSchedule:
    kind: str                           # "fixed" or "power"
    lam_t: float
    gam_t: float
    lam_e: float
    gam_e: float
    interim_sizes: tuple[int, ...] = (10, 20, 30)
    arm_size: int = 40
    efficacy_looks: tuple[int, ...] = (20,)
    null_go: Optional[float] = None
    power: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("fixed", "power"):
            raise ValueError("schedule kind must be 'fixed' or 'power'")
        for lam in (self.lam_t, self.lam_e):
            if not 0 <= lam <= 1:
                raise ValueError("lambda must lie in [0, 1]")
        if self.kind == "power" and min(self.gam_t, self.gam_e) < 0:
            raise ValueError("gamma must be non-negative")

    @classmethod
    def fixed(cls, c_tox: float, c_eff: float, **kw) -> "CutoffSchedule":
        """Constant cutoffs ``c_tox`` and ``c_eff`` at every look."""
        return cls("fixed", 1.0 - c_tox, 0.0, 1.0 - c_eff, 0.0, **kw)

    @property
    def looks(self) -> tuple[int, ...]:
        return tuple(self.interim_sizes) + (self.arm_size,)

    def monitors(self, m: int, margin: Margin) -> bool:
        if margin is Margin.TOX:
            return m in self.looks
        return m == self.arm_size or m in self.efficacy_looks

    def with_looks(self, interim_sizes, arm_size, efficacy_looks) -> "CutoffSchedule":
        from dataclasses import replace
        return replace(self, interim_sizes=tuple(interim_sizes), arm_size=arm_size,
                       efficacy_looks=tuple(efficacy_looks))


def cutoff_at(s: CutoffSchedule, m: float, margin: Margin) -> float:
    if not 0 < m <= s.arm_size:
        raise ValueError(f"m = {m} outside (0, {s.arm_size}]")
    lam, gam = (s.lam_t, s.gam_t) if margin is Margin.TOX else (s.lam_e, s.gam_e)
    if s.kind == "fixed":
        return 1.0 - lam
    return 1.0 - lam * (m / s.arm_size) ** gam


def dirichlet_prior(h: Hypotheses) -> tuple[float, float, float, float]:
    """Cell prior of total mass 1 centred on the null (independent margins)."""
    return independent_cells(h.p_null, h.q_null)


def margin_priors(design: Phase2Design, h: Hypotheses, prior=None):
    """(a_in, a_out) Beta priors of the toxicity and efficacy margins."""
    if design is Phase2Design.TS:
        return (1.0, 1.0), (1.0, 1.0)
    a = dirichlet_prior(h) if prior is None else tuple(prior)
    return (a[2] + a[3], a[0] + a[1]), (a[0] + a[2], a[1] + a[3])


@dataclass
class MarginData:
    """Toxicity and efficacy data of one arm at a look.

    ``tox_info``/``eff_info`` count patients with a resolved margin plus the
    follow-up fractions of pending ones (TOP).
    """
    n_tox: float
    tox_info: float
    n_resp: float
    eff_info: float

    @classmethod
    def from_cells(cls, cells: Sequence[float]) -> "MarginData":
        n = sum(cells)
        return cls(cells[2] + cells[3], n, cells[0] + cells[2], n)


def posterior_probs(data: MarginData, design: Phase2Design, h: Hypotheses, prior=None):
    """(Pr(p > p_null | data), Pr(q <= q_null | data))."""
    (ta, tb), (ea, eb) = margin_priors(design, h, prior)
    tox = beta_sf(ta + data.n_tox, tb + data.tox_info - data.n_tox, h.p_null)
    eff = 1.0 - beta_sf(ea + data.n_resp, eb + data.eff_info - data.n_resp, h.q_null)
    return tox, eff


def monitor_look(data: MarginData, h: Hypotheses, s: CutoffSchedule, m: int,
                 design: Union[str, Phase2Design], prior=None) -> LookResult:
    """Go/no-go check at the look taken with ``m`` enrolled patients."""
    design = Phase2Design.parse(design)
    if m not in s.looks:
        raise ValueError(f"{m} is not a scheduled look {s.looks}")
    p_tox, p_fut = posterior_probs(data, design, h, prior)
    if s.monitors(m, Margin.TOX) and p_tox > cutoff_at(s, m, Margin.TOX):
        return LookResult.NOGO
    if s.monitors(m, Margin.EFF) and p_fut > cutoff_at(s, m, Margin.EFF):
        return LookResult.NOGO
    return LookResult.CONTINUE


# ------------------------------------------------------------------ arms

@dataclass
class ArmState:
    dose: int
    patients: list = field(default_factory=list)
    status: ArmStatus = ArmStatus.ACTIVE
    looks_done: int = 0
    stopped_at: Optional[int] = None      # look size of a no-go
    awaiting: Optional[int] = None        # look size the arm is waiting on
    look_time: float = math.inf

    @property
    def n(self) -> int:
        return len(self.patients)

    def cells(self) -> list[int]:
        c = [0, 0, 0, 0]
        for p in self.patients:
            c[int(p.cell) - 1] += 1
        return c

    def margin_data(self, t: float, cfg: TrialConfig, tite: bool) -> MarginData:
        """Margin data visible on day ``t``; pending outcomes count only when ``tite``."""
        n_tox = tox_info = n_resp = eff_info = 0.0
        for p in self.patients:
            fu = t - p.arrival
            if p.tox_event and p.tox_time <= fu:
                n_tox += 1
                tox_info += 1
            elif fu >= cfg.tox_window:
                tox_info += 1
            elif tite:
                tox_info += fu / cfg.tox_window
            if p.eff_event and p.eff_time <= fu:
                n_resp += 1
                eff_info += 1
            elif fu >= cfg.eff_window:
                eff_info += 1
            elif tite:
                eff_info += fu / cfg.eff_window
        return MarginData(n_tox, tox_info, n_resp, eff_info)

    def resolution(self, p: PatientRecord, cfg: TrialConfig, with_eff: bool) -> float:
        t = p.tox_resolution(cfg.tox_window)
        if with_eff:
            t = max(t, p.eff_resolution(cfg.eff_window))
        return t

    def look_ready_time(self, t: float, cfg: TrialConfig, s: CutoffSchedule,
                        design: Phase2Design) -> float:
        """Day on which the pending look (``self.awaiting``) can be taken."""
        m = self.awaiting
        with_eff = s.monitors(m, Margin.EFF)
        times = [self.resolution(p, cfg, with_eff) for p in self.patients]
        if not design.tite or m == s.arm_size:
            return max([t] + times)
        pending = sorted(r for r in times if r > t)
        limit = cfg.pending_fraction_limit
        if len(pending) <= math.floor(limit * len(times) + 1e-12):
            return t
        allowed = math.floor(limit * len(times) + 1e-12)
        return pending[len(pending) - allowed - 1]

    def observed_utility(self, w: UtilityWeights) -> float:
        c = self.cells()
        return sum(n * u for n, u in zip(c, w.as_tuple())) / sum(c)


def select_rp3d(arms: Sequence[ArmState], weights: UtilityWeights = UtilityWeights()) -> Optional[int]:
    """Go arm with the highest observed Phase II utility; ties to the lower dose."""
    go = [a for a in arms if a.status is ArmStatus.GO]
    if not go:
        return None
    util = {a.dose: a.observed_utility(weights) for a in go}
    top = max(util.values())
    return min(d for d, u in util.items() if math.isclose(u, top, rel_tol=0, abs_tol=1e-9))


# ------------------------------------------------------------------ calibration

def _binom_pmf(n: int, theta: float) -> np.ndarray:
    k = np.arange(n + 1)
    coef = np.array([math.comb(n, int(i)) for i in k], dtype=float)
    return coef * theta ** k * (1.0 - theta) ** (n - k)


@lru_cache(maxsize=4096)
def _tail_column(a_in: float, a_out: float, m: int, threshold: float, upper: bool) -> tuple:
    """Posterior probability per count k = 0..m; ``upper`` gives Pr(rate > threshold)."""
    out = []
    for k in range(m + 1):
        sf = beta_sf(a_in + k, a_out + m - k, threshold)
        out.append(sf if upper else 1.0 - sf)
    return tuple(out)


def stopping_boundaries(s: CutoffSchedule, h: Hypotheses, design: Union[str, Phase2Design],
                        prior=None) -> list[tuple[int, Optional[int], Optional[int]]]:
    """Integer boundaries per look: (m, min DLTs for no-go, max responses for no-go).

    ``None`` means the margin cannot trigger (or is not monitored) at that look.
    """
    design = Phase2Design.parse(design)
    (ta, tb), (ea, eb) = margin_priors(design, h, prior)
    rows = []
    for m in s.looks:
        tox_b = eff_b = None
        if s.monitors(m, Margin.TOX):
            c = cutoff_at(s, m, Margin.TOX)
            col = _tail_column(ta, tb, m, h.p_null, True)
            tox_b = next((k for k in range(m + 1) if col[k] > c), None)
        if s.monitors(m, Margin.EFF):
            c = cutoff_at(s, m, Margin.EFF)
            col = _tail_column(ea, eb, m, h.q_null, False)
            eff_b = max((k for k in range(m + 1) if col[k] > c), default=None)
        rows.append((m, tox_b, eff_b))
    return rows


def _margin_survival(looks: Sequence[int], bounds: Sequence[Optional[int]], theta: float,
                     upper: bool) -> float:
    """Probability a binomial count path never hits the stopping region."""
    dist = np.ones(1)
    prev = 0
    for m, b in zip(looks, bounds):
        dist = np.convolve(dist, _binom_pmf(m - prev, theta))
        prev = m
        if b is not None:
            if upper:
                dist[b:] = 0.0
            else:
                dist[:b + 1] = 0.0
    return float(dist.sum())


def _margin_bounds(looks, monitored, tails, cutoffs, upper):
    out = []
    for m, mon, col, c in zip(looks, monitored, tails, cutoffs):
        if not mon:
            out.append(None)
        elif upper:
            out.append(next((k for k in range(m + 1) if col[k] > c), None))
        else:
            out.append(max((k for k in range(m + 1) if col[k] > c), default=None))
    return tuple(out)


def _margin_table(looks, monitored, a_in, a_out, threshold, upper, theta0, theta1, gammas,
                  arm_size):
    """Null and alternative survival for every (lam, gam) candidate of one margin."""
    tails = [_tail_column(a_in, a_out, m, threshold, upper) for m in looks]
    memo: dict = {}
    rows = []
    for lam in LAMBDA_GRID:
        for gam in gammas:
            cut = [1.0 - lam * (m / arm_size) ** gam for m in looks]
            b = _margin_bounds(looks, monitored, tails, cut, upper)
            if b not in memo:
                memo[b] = (_margin_survival(looks, b, theta0, upper),
                           _margin_survival(looks, b, theta1, upper))
            rows.append((lam, gam) + memo[b])
    return np.array(rows)


def _pick(power, null, keys):
    order = np.lexsort(tuple(reversed([-np.round(power, 12), np.round(null, 12)] + list(keys))))
    return order[0]


def calibrate(h: Hypotheses, interim_sizes: Sequence[int], arm_size: int, alpha: float,
              design: Union[str, Phase2Design], efficacy_looks: Sequence[int] = (20,),
              prior=None) -> CutoffSchedule:
    """Grid-search the cutoff schedule maximizing power with null go-probability <= alpha.

    Go probabilities are exact (binomial path enumeration of each margin;
    under the independent null and alternative configurations the arm-level
    go probability is the product of the margin survival probabilities).
    TS searches a fixed cutoff per margin, each with its own alpha.
    """
    design = Phase2Design.parse(design)
    if not 0 <= alpha <= 1:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    looks = tuple(interim_sizes) + (arm_size,)
    if any(b <= a for a, b in zip(looks, looks[1:])):
        raise ValueError("look sizes must increase")
    eff_monitored = [m == arm_size or m in efficacy_looks for m in looks]
    tox_monitored = [True] * len(looks)
    (ta, tb), (ea, eb) = margin_priors(design, h, prior)
    gammas = (0.0,) if design is Phase2Design.TS else GAMMA_GRID
    tox = _margin_table(looks, tox_monitored, ta, tb, h.p_null, True, h.p_null, h.p_alt,
                        gammas, arm_size)
    eff = _margin_table(looks, eff_monitored, ea, eb, h.q_null, False, h.q_null, h.q_alt,
                        gammas, arm_size)
    common = dict(interim_sizes=tuple(interim_sizes), arm_size=arm_size,
                  efficacy_looks=tuple(efficacy_looks))

    if design is Phase2Design.TS:
        chosen = []
        for tab, name in ((tox, "toxicity"), (eff, "efficacy")):
            ok = (tab[:, 2] <= alpha) & (tab[:, 3] > 0)
            if not ok.any():
                raise CalibrationError(f"no feasible {name} cutoff at alpha={alpha}; "
                                       f"smallest null go-probability {tab[:, 2].min():.4g}")
            sub = tab[ok]
            i = _pick(sub[:, 3], sub[:, 2], [-sub[:, 0]])
            chosen.append(sub[i])
        t, e = chosen
        return CutoffSchedule("fixed", float(t[0]), 0.0, float(e[0]), 0.0,
                              null_go=float(t[2] * e[2]), power=float(t[3] * e[3]), **common)

    null = np.outer(tox[:, 2], eff[:, 2])
    power = np.outer(tox[:, 3], eff[:, 3])
    ok = (null <= alpha) & (power > 0)
    if not ok.any():
        live = power > 0
        best = null[live].min() if live.any() else float("nan")
        raise CalibrationError(f"no feasible schedule at alpha={alpha}; "
                               f"smallest null go-probability with positive power {best:.4g}")
    ii, jj = np.nonzero(ok)
    i = _pick(power[ii, jj], null[ii, jj],
              [-tox[ii, 0], tox[ii, 1], -eff[jj, 0], eff[jj, 1]])
    ti, ej = ii[i], jj[i]
    return CutoffSchedule("power", float(tox[ti, 0]), float(tox[ti, 1]),
                          float(eff[ej, 0]), float(eff[ej, 1]),
                          null_go=float(null[ti, ej]), power=float(power[ti, ej]), **common)


def go_probability(s: CutoffSchedule, h: Hypotheses, design: Union[str, Phase2Design],
                   cells: Sequence[float], prior=None) -> float:
    """Exact probability that an arm with true cell probabilities ``cells`` ends in go.

    Works for any joint distribution: the state is the pair (DLTs, responses)
    carried look to look.
    """
    design = Phase2Design.parse(design)
    pi = np.asarray(cells, dtype=float)
    single = np.zeros((2, 2))            # [dlt, response]
    single[0, 1], single[0, 0], single[1, 1], single[1, 0] = pi
    bounds = stopping_boundaries(s, h, design, prior)
    dist = np.ones((1, 1))
    prev = 0
    for m, tb, eb in bounds:
        inc = np.ones((1, 1))
        for _ in range(m - prev):
            inc = _conv2(inc, single)
        dist = _conv2(dist, inc)
        prev = m
        if tb is not None:
            dist[tb:, :] = 0.0
        if eb is not None:
            dist[:, :eb + 1] = 0.0
    return float(dist.sum())


def _conv2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros((a.shape[0] + b.shape[0] - 1, a.shape[1] + b.shape[1] - 1))
    for i in range(b.shape[0]):
        for j in range(b.shape[1]):
            if b[i, j]:
                out[i:i + a.shape[0], j:j + a.shape[1]] += b[i, j] * a
    return out


_CALIBRATION_CACHE: dict = {}


def schedule_for(design: Union[str, Phase2Design], cfg: TrialConfig) -> CutoffSchedule:
    """Calibrated schedule for a design under ``cfg`` (cached)."""
    design = Phase2Design.parse(design)
    h = Hypotheses.from_config(cfg)
    # TOP shares the complete-data calibration of BOP2
    key_design = Phase2Design.BOP2 if design is Phase2Design.TOP else design
    key = (key_design, h, tuple(cfg.interim_sizes), cfg.arm_size, cfg.type1_alpha,
           tuple(cfg.efficacy_looks))
    if key not in _CALIBRATION_CACHE:
        _CALIBRATION_CACHE[key] = calibrate(h, cfg.interim_sizes, cfg.arm_size, cfg.type1_alpha,
                                            key_design, cfg.efficacy_looks)
    return _CALIBRATION_CACHE[key]
