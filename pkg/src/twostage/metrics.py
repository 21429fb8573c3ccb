"""Operating characteristics of simulated trials and their report tables.

Proportions are stored as fractions and rendered as percentages; durations
are stored in months (30 days each).
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .domain import Classification, Scenario, TrialConfig, classify_scenario
from .phase1 import Phase1Design
from .phase2 import Phase2Design
from .simulator import ReplicationResult

DAYS_PER_MONTH = 30.0

PHASE1_METRICS = ("p_rp2d", "p_rp2d_tox", "p_et_s1", "n_tox_s1", "dur_s1")
OVERALL_METRICS = ("p_rp3d", "p_et", "n_total", "n_tox", "dur")
METRICS = PHASE1_METRICS + OVERALL_METRICS
PROPORTIONS = frozenset({"p_rp2d", "p_rp2d_tox", "p_et_s1", "p_rp3d", "p_et"})
CSV_COLUMNS = ("scenario", "p1_design", "p2_design", "metric", "value", "mc_se")
FORMATS = ("text", "csv", "json")

# how a missing value is written: NA where the quantity has no meaning for the
# scenario (no true OBD in Phase I), blank where it is simply not reported
_NA = "NA"


@dataclass
class MetricsSummary:
    scenario: str
    p1_design: str
    p2_design: Optional[str]
    reps: int
    p_rp2d: Optional[float]
    p_rp2d_tox: float
    p_et_s1: float
    p_rp3d: Optional[float]
    p_et: Optional[float]
    n_tox_s1: float
    n_total: float
    n_tox: float
    dur_s1: float
    dur: float
    mc_se: dict = field(default_factory=dict)

    def value(self, metric: str) -> Optional[float]:
        if metric not in METRICS:
            raise KeyError(metric)
        return getattr(self, metric)

    def check(self) -> None:
        for m in PROPORTIONS:
            v = getattr(self, m)
            if v is not None and not -1e-12 <= v <= 1 + 1e-12:
                raise AssertionError(f"{m}={v} is not a proportion")
        if self.p_et is not None and self.p_et < self.p_et_s1 - 1e-12:
            raise AssertionError("p_et < p_et_s1")
        if self.n_tox < self.n_tox_s1 - 1e-12:
            raise AssertionError("n_tox < n_tox_s1")
        if self.dur < self.dur_s1 - 1e-12:
            raise AssertionError("dur < dur_s1")


def _prop(flags: Sequence[bool]) -> tuple[float, float]:
    p = float(np.mean(flags))
    return p, math.sqrt(p * (1.0 - p) / len(flags))


def _mean(xs: Sequence[float]) -> tuple[float, float]:
    a = np.asarray(xs, dtype=float)
    se = float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else 0.0
    return float(a.mean()), se


def aggregate(results: Sequence[ReplicationResult], classification: Classification) -> MetricsSummary:
    """Fold replications of one (scenario, Phase I design, Phase II design)."""
    if not results:
        raise ValueError("aggregate needs at least one replication")
    keys = {(r.scenario, r.p1_design, r.p2_design) for r in results}
    if len(keys) != 1:
        raise ValueError(f"results mix several scenario/design combinations: {sorted(map(str, keys))}")
    scenario, p1, p2 = keys.pop()
    obd, toxic = classification.obd, classification.toxic
    se: dict = {}
    vals: dict = {}

    def put(name, pair):
        vals[name], se[name] = pair

    if obd is None:
        vals["p_rp2d"] = None
    else:
        put("p_rp2d", _prop([obd in r.rp2ds for r in results]))
    put("p_rp2d_tox", _prop([any(d in toxic for d in r.rp2ds) for r in results]))
    put("p_et_s1", _prop([r.terminated_stage == "phase1" for r in results]))
    if p2 is None:
        vals["p_rp3d"] = vals["p_et"] = None
    else:
        put("p_et", _prop([r.rp3d is None for r in results]))
        if obd is None:
            vals["p_rp3d"] = None
        else:
            put("p_rp3d", _prop([r.rp3d == obd for r in results]))
    put("n_tox_s1", _mean([r.n_tox_s1 for r in results]))
    put("n_total", _mean([r.n_s1 + r.n_s2 for r in results]))
    put("n_tox", _mean([r.n_tox for r in results]))
    put("dur_s1", _mean([r.dur_s1 / DAYS_PER_MONTH for r in results]))
    put("dur", _mean([r.dur_total / DAYS_PER_MONTH for r in results]))
    out = MetricsSummary(scenario, p1, p2, len(results), mc_se=se, **vals)
    out.check()
    return out


def _natural(name: str):
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", name)]


_P1_ORDER = {d.value: i for i, d in enumerate(Phase1Design)}
_P2_ORDER = {d.value: i for i, d in enumerate(Phase2Design)}


def sort_key(s: MetricsSummary):
    return (_natural(s.scenario), _P1_ORDER.get(s.p1_design, 99), s.p1_design,
            -1 if s.p2_design is None else _P2_ORDER.get(s.p2_design, 99), s.p2_design or "")


def summarize(results: Iterable[ReplicationResult], scenarios: Mapping[str, Scenario] | Sequence[Scenario],
              cfg: TrialConfig = TrialConfig()) -> list[MetricsSummary]:
    """Group replications by combination and aggregate each group, in report order."""
    if not isinstance(scenarios, Mapping):
        scenarios = {s.name: s for s in scenarios}
    groups: dict = {}
    for r in results:
        groups.setdefault((r.scenario, r.p1_design, r.p2_design), []).append(r)
    classes = {}
    out = []
    for (name, _, _), rs in groups.items():
        if name not in scenarios:
            raise KeyError(f"no scenario definition for {name!r}")
        if name not in classes:
            classes[name] = classify_scenario(scenarios[name], cfg)
        out.append(aggregate(rs, classes[name]))
    return sorted(out, key=sort_key)


# ----------------------------------------------------------------- render

def _fmt(metric: str, v: Optional[float]) -> str:
    if v is None:
        return ""
    return f"{100 * v:.1f}" if metric in PROPORTIONS else f"{v:.1f}"


def _fmt_se(metric: str, v: Optional[float]) -> str:
    if v is None:
        return ""
    return f"{100 * v:.2f}" if metric in PROPORTIONS else f"{v:.2f}"


def _cell(s: MetricsSummary, metric: str) -> str:
    v = s.value(metric)
    if v is None and metric == "p_rp2d":
        return _NA
    return _fmt(metric, v)


def _records(summaries: Sequence[MetricsSummary]) -> list[dict]:
    rows = []
    for s in sorted(summaries, key=sort_key):
        for m in METRICS:
            if m in ("p_rp3d", "p_et") and s.p2_design is None:
                continue
            rows.append({"scenario": s.scenario, "p1_design": s.p1_design,
                         "p2_design": s.p2_design or "", "metric": m,
                         "value": _cell(s, m), "mc_se": _fmt_se(m, s.mc_se.get(m))})
    return rows


def _text(summaries: Sequence[MetricsSummary]) -> str:
    lines = ["Operating characteristics (proportions in %, durations in months)"]
    by_scenario: dict = {}
    for s in sorted(summaries, key=sort_key):
        by_scenario.setdefault(s.scenario, []).append(s)
    for name, group in by_scenario.items():
        p1_rows: dict = {}
        for s in group:
            p1_rows.setdefault(s.p1_design, s)
        lines += ["", f"{name}: Phase I",
                  f"{'design':<13}" + "".join(f"{m:>12}" for m in PHASE1_METRICS)]
        for p1, s in p1_rows.items():
            lines.append(f"{p1:<13}" + "".join(f"{_cell(s, m):>12}" for m in PHASE1_METRICS))
        p2s = sorted({s.p2_design for s in group if s.p2_design}, key=lambda d: _P2_ORDER.get(d, 99))
        if not p2s:
            continue
        lines += ["", f"{name}: overall"]
        lines.append(f"{'':<13}" + "".join(f"{p2:^{10 * len(OVERALL_METRICS)}}" for p2 in p2s))
        lines.append(f"{'design':<13}" + "".join(f"{m:>10}" for _ in p2s for m in OVERALL_METRICS))
        cells = {(s.p1_design, s.p2_design): s for s in group}
        for p1 in dict.fromkeys(s.p1_design for s in group if s.p2_design):
            row = f"{p1:<13}"
            for p2 in p2s:
                s = cells.get((p1, p2))
                row += "".join(f"{(_cell(s, m) if s else ''):>10}" for m in OVERALL_METRICS)
            lines.append(row)
    return "\n".join(lines) + "\n"


def render(summaries: Sequence[MetricsSummary], fmt: str = "text") -> str:
    """Report document in ``text``, ``csv`` or ``json`` form; ordering is deterministic."""
    if fmt == "text":
        return _text(summaries)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(_records(summaries))
        return buf.getvalue()
    if fmt == "json":
        return json.dumps(_records(summaries), indent=1) + "\n"
    raise ValueError(f"unsupported format {fmt!r}; choose from {FORMATS}")


def _parse_value(metric: str, text: str, scale: bool) -> Optional[float]:
    if text in ("", _NA):
        return None
    v = float(text)
    return v / 100.0 if scale and metric in PROPORTIONS else v


def parse_records(rows: Iterable[Mapping[str, str]]) -> list[MetricsSummary]:
    """Rebuild summaries from rendered CSV/JSON records (values carry report rounding)."""
    acc: dict = {}
    for row in rows:
        key = (row["scenario"], row["p1_design"], row["p2_design"] or None)
        acc.setdefault(key, {})[row["metric"]] = (row["value"], row["mc_se"])
    out = []
    for (scenario, p1, p2), got in acc.items():
        vals = {m: _parse_value(m, got[m][0], True) if m in got else None for m in METRICS}
        se = {m: _parse_value(m, got[m][1], True) for m in got if got[m][1] != ""}
        out.append(MetricsSummary(scenario, p1, p2, 0, mc_se=se, **vals))
    return sorted(out, key=sort_key)


def parse_csv(text: str) -> list[MetricsSummary]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {reader.fieldnames}")
    return parse_records(reader)
