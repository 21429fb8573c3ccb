"""Command-line interface: ``twostage {boundaries,calibrate,simulate,report}``.

Exit status is 0 on success, 2 for invalid input or configuration and 1 for
failures while running.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import metrics
from .domain import (ScenarioError, TrialConfig, bundled_scenario, config_overrides,
                     load_config, load_scenarios)
from .phase1 import Phase1Design, boin_boundaries, decision_table
from .phase2 import CalibrationError, Hypotheses, Phase2Design, calibrate, stopping_boundaries
from .simulator import (all_combos, parse_combo, read_results, run_batch, run_trial,
                        write_event_log, write_results)

OUT_ENV = "TWOSTAGE_OUT"
DEFAULT_OUT = "results"


class UsageError(ValueError):
    """Bad command-line input; maps to exit status 2."""


@dataclass
class RunSpec:
    scenarios: list
    combos: list
    reps: int = 1000
    seed: int = 0
    parallelism: int = 1
    out: Path = Path(DEFAULT_OUT)
    cfg: TrialConfig = field(default_factory=TrialConfig)
    event_logs: int = 0

    def __post_init__(self):
        if not self.scenarios:
            raise UsageError("no scenarios selected")
        if not self.combos:
            raise UsageError("no design combinations selected")
        if self.reps < 1:
            raise UsageError("reps must be >= 1")
        if self.parallelism < 1:
            raise UsageError("parallelism must be >= 1")


# ---------------------------------------------------------------- parsing

def parse_scenarios(text: str) -> list:
    """``1-9``, ``1,3,5``, bundled names or paths to scenario files/directories."""
    out = []
    for tok in (t.strip() for t in text.split(",")):
        if not tok:
            continue
        lo, dash, hi = tok.partition("-")
        if dash and lo.isdigit() and hi.isdigit():
            if int(lo) > int(hi):
                raise UsageError(f"empty scenario range {tok!r}")
            out.extend(bundled_scenario(i) for i in range(int(lo), int(hi) + 1))
        elif Path(tok).exists():
            out.extend(load_scenarios(Path(tok)))
        else:
            out.append(bundled_scenario(tok))
    names = [s.name for s in out]
    if len(set(names)) != len(names):
        raise UsageError(f"scenario selected twice: {names}")
    return out


def parse_combos(text: str) -> list:
    """``all`` (fifteen combinations), ``phase1`` (Phase I only) or ``p1+p2`` tokens."""
    out = []
    for tok in (t.strip().lower() for t in text.split(",")):
        if not tok:
            continue
        if tok == "all":
            out.extend(all_combos())
        elif tok == "phase1":
            out.extend((d, None) for d in Phase1Design)
        else:
            try:
                out.append(parse_combo(tok))
            except ValueError as exc:
                raise UsageError(f"bad design combination {tok!r}: {exc}") from exc
    seen, uniq = set(), []
    for c in out:
        if c not in seen:
            seen.add(c)
            uniq.append(c)
    return uniq


def combo_name(c) -> str:
    p1, p2 = c
    return p1.value if p2 is None else f"{p1.value}+{p2.value}"


def build_config(config_path: Optional[str], sets: Sequence[str]) -> TrialConfig:
    """Built-in defaults, then the config file, then ``--set key=value`` flags."""
    cfg = TrialConfig()
    if config_path:
        cfg = load_config(config_path, cfg)
    pairs = {}
    for s in sets:
        key, eq, value = s.partition("=")
        if not eq:
            raise UsageError(f"--set expects key=value, got {s!r}")
        pairs[key] = value
    try:
        return cfg.replace(**config_overrides(pairs)) if pairs else cfg
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _out_dir(arg: Optional[str]) -> Path:
    return Path(arg or os.environ.get(OUT_ENV) or DEFAULT_OUT)


# --------------------------------------------------------------- commands

def cmd_boundaries(phi: float, phi1: Optional[float], phi2: Optional[float], n_max: int,
                   eta: float = 0.95, fmt: str = "text") -> str:
    phi1 = round(0.6 * phi, 10) if phi1 is None else phi1
    phi2 = round(1.4 * phi, 10) if phi2 is None else phi2
    b = boin_boundaries(phi, phi1, phi2)
    rows = decision_table(b, n_max, eta, b.lambda_d)
    if fmt == "json":
        return json.dumps({"phi": phi, "phi1": phi1, "phi2": phi2, "lambda_e": b.lambda_e,
                           "lambda_d": b.lambda_d,
                           "table": [dict(zip(("n", "escalate_max", "deescalate_min",
                                                "eliminate_min"), r)) for r in rows]},
                          indent=1) + "\n"
    dash = lambda v: "-" if v is None else str(v)  # noqa: E731
    lines = [f"phi={phi:g} phi1={phi1:g} phi2={phi2:g}",
             f"lambda_e={b.lambda_e:.4f} lambda_d={b.lambda_d:.4f}",
             f"{'n':>4}{'escalate if DLT <=':>20}{'de-escalate if DLT >=':>23}{'eliminate if DLT >=':>21}"]
    lines += [f"{n:>4}{dash(e):>20}{dash(d):>23}{dash(x):>21}" for n, e, d, x in rows]
    return "\n".join(lines) + "\n"


def cmd_calibrate(h: Hypotheses, interim_sizes: Sequence[int], arm_size: int,
                  efficacy_looks: Sequence[int], design: str, alpha: float,
                  fmt: str = "text") -> str:
    s = calibrate(h, interim_sizes, arm_size, alpha, design, efficacy_looks)
    bounds = stopping_boundaries(s, h, design)
    if fmt == "json":
        doc = {"design": Phase2Design.parse(design).value, "alpha": alpha,
               "hypotheses": asdict(h), "schedule": asdict(s),
               "boundaries": [dict(zip(("m", "nogo_if_dlt_ge", "nogo_if_resp_le"), r))
                              for r in bounds]}
        return json.dumps(doc, indent=1) + "\n"
    lines = [f"design={Phase2Design.parse(design).value} alpha={alpha:g} "
             f"H0=(p={h.p_null:g}, q={h.q_null:g}) H1=(p={h.p_alt:g}, q={h.q_alt:g})",
             f"kind={s.kind} lambda_T={s.lam_t:g} gamma_T={s.gam_t:g} "
             f"lambda_E={s.lam_e:g} gamma_E={s.gam_e:g}",
             f"null go-probability={s.null_go:.4f} power={s.power:.4f}",
             f"{'m':>4}{'no-go if DLT >=':>18}{'no-go if responses <=':>24}"]
    for m, t, e in bounds:
        lines.append(f"{m:>4}{'-' if t is None else t:>18}{'-' if e is None else e:>24}")
    return "\n".join(lines) + "\n"


def cmd_simulate(spec: RunSpec, stream=None) -> list:
    """Run the batch and write raw results, metrics tables and optional event logs."""
    combos = [combo_name(c) for c in spec.combos]
    results = run_batch(spec.scenarios, combos, spec.cfg, reps=spec.reps, seed=spec.seed,
                        parallelism=spec.parallelism)
    summaries = metrics.summarize(results, spec.scenarios, spec.cfg)
    spec.out.mkdir(parents=True, exist_ok=True)
    write_results(results, spec.out / "results.jsonl")
    for fmt, name in (("csv", "metrics.csv"), ("json", "metrics.json"), ("text", "report.txt")):
        (spec.out / name).write_text(metrics.render(summaries, fmt), encoding="utf-8")
    if spec.event_logs:
        logdir = spec.out / "events"
        logdir.mkdir(exist_ok=True)
        for sc in spec.scenarios:
            for p1, p2 in spec.combos:
                for rep in range(min(spec.event_logs, spec.reps)):
                    log: list = []
                    run_trial(sc, p1, p2, spec.cfg, spec.seed, rep, log=log)
                    tag = combo_name((p1, p2)).replace("+", "_")
                    write_event_log(log, logdir / f"{sc.name}_{tag}_rep{rep}.jsonl")
    if stream is not None:
        stream.write(metrics.render(summaries, "text"))
    return summaries


def cmd_report(results_path: Path, scenarios: list, cfg: TrialConfig, fmt: str) -> str:
    results = read_results(results_path)
    names = {r.scenario for r in results}
    known = {s.name: s for s in scenarios}
    for n in sorted(names - set(known)):
        known[n] = bundled_scenario(n)
    return metrics.render(metrics.summarize(results, known, cfg), fmt)


# ------------------------------------------------------------------- main

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="twostage", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("boundaries", help="interval boundaries and the dose decision table")
    b.add_argument("--phi", type=float, default=TrialConfig().target)
    b.add_argument("--phi1", type=float, default=None, help="default 0.6*phi")
    b.add_argument("--phi2", type=float, default=None, help="default 1.4*phi")
    b.add_argument("--n-max", type=int, default=TrialConfig().n1)
    b.add_argument("--eta", type=float, default=TrialConfig().safety_cutoff)
    b.add_argument("--format", choices=("text", "json"), default="text")

    c = sub.add_parser("calibrate", help="calibrate a Phase II monitoring schedule")
    d = TrialConfig()
    c.add_argument("--design", default="bop2", help="ts, bop2 or top")
    c.add_argument("--alpha", type=float, default=d.type1_alpha)
    c.add_argument("--p-null", type=float, default=d.p_null)
    c.add_argument("--p-alt", type=float, default=d.p_alt)
    c.add_argument("--q-null", type=float, default=d.q_null)
    c.add_argument("--q-alt", type=float, default=d.q_alt)
    c.add_argument("--interim", default=",".join(map(str, d.interim_sizes)))
    c.add_argument("--arm-size", type=int, default=d.arm_size)
    c.add_argument("--efficacy-looks", default=",".join(map(str, d.efficacy_looks)))
    c.add_argument("--format", choices=("text", "json"), default="text")

    def run_opts(q):
        q.add_argument("--config", help="INI file with a [trial] section of overrides")
        q.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one TrialConfig field (repeatable)")

    s = sub.add_parser("simulate", help="replicate trials and write operating characteristics")
    s.add_argument("--scenarios", default="1-9")
    s.add_argument("--combos", default="all", help="'all', 'phase1' or e.g. 'tite-boin12+top'")
    s.add_argument("--reps", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--parallelism", type=int, default=1)
    s.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    s.add_argument("--event-logs", type=int, default=0, metavar="K",
                   help="write event logs for the first K replications of every combination")
    s.add_argument("--quiet", action="store_true")
    run_opts(s)

    r = sub.add_parser("report", help="re-render metrics from a results.jsonl file")
    r.add_argument("results", nargs="?", default=None,
                   help="results file (default <out>/results.jsonl)")
    r.add_argument("--scenarios", default="", help="scenario files for non-bundled scenarios")
    r.add_argument("--format", choices=metrics.FORMATS, default="text")
    run_opts(r)
    return p


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from exc


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "boundaries":
            sys.stdout.write(cmd_boundaries(args.phi, args.phi1, args.phi2, args.n_max,
                                            args.eta, args.format))
        elif args.command == "calibrate":
            h = Hypotheses(args.p_null, args.p_alt, args.q_null, args.q_alt)
            sys.stdout.write(cmd_calibrate(h, _ints(args.interim), args.arm_size,
                                           _ints(args.efficacy_looks), args.design,
                                           args.alpha, args.format))
        elif args.command == "simulate":
            spec = RunSpec(parse_scenarios(args.scenarios), parse_combos(args.combos),
                           args.reps, args.seed, args.parallelism, _out_dir(args.out),
                           build_config(args.config, args.set), args.event_logs)
            cmd_simulate(spec, None if args.quiet else sys.stdout)
        elif args.command == "report":
            path = Path(args.results) if args.results else _out_dir(None) / "results.jsonl"
            if not path.exists():
                raise UsageError(f"no results file at {path}")
            scen = parse_scenarios(args.scenarios) if args.scenarios else []
            sys.stdout.write(cmd_report(path, scen, build_config(args.config, args.set),
                                        args.format))
    except (UsageError, ScenarioError, ValueError) as exc:
        print(f"twostage: error: {exc}", file=sys.stderr)
        return 2
    except CalibrationError as exc:
        print(f"twostage: calibration failed: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure inside the engines
        print(f"twostage: run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
