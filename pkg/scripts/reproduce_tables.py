"""Simulate all scenarios and design combinations and print them next to the reference tables.

    python scripts/reproduce_tables.py --reps 1000 --seed 7 [--results results.jsonl]

With --results an existing results file is summarized instead of re-simulating.
Each cell prints "simulated / reference" and is flagged with * when it falls
outside the acceptance band (proportions in percentage points).
"""

import argparse
import json
from pathlib import Path

from twostage import bundled_scenarios
from twostage.metrics import summarize
from twostage.phase1 import Phase1Design
from twostage.simulator import read_results, run_batch, write_results

REFERENCE = Path(__file__).resolve().parents[1] / "tests" / "data" / "reference_oc.json"
PHASE1 = {"p_rp2d": 6, "p_rp2d_tox": 6, "p_et_s1": 6, "n_tox_s1": 2.5, "dur_s1": "15%"}
OVERALL = {"p_rp3d": 8, "p_et": 8, "n_total": 10, "dur": "15%"}
PROPORTIONS = {"p_rp2d", "p_rp2d_tox", "p_et_s1", "p_rp3d", "p_et"}


def cell(summary, metric, ref, tol):
    got = summary.value(metric)
    if got is None:
        return "NA" if ref is None else f"NA/{ref}"
    if metric in PROPORTIONS:
        got *= 100
    if ref is None:
        return f"{got:.1f}/-"
    limit = float(tol[:-1]) / 100 * ref if isinstance(tol, str) else tol
    flag = "*" if abs(got - ref) > limit else " "
    return f"{got:.1f}/{ref}{flag}"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--parallelism", type=int, default=1)
    ap.add_argument("--results", help="summarize this results.jsonl instead of simulating")
    ap.add_argument("--save", help="write the simulated results here")
    args = ap.parse_args()

    scenarios = bundled_scenarios()
    if args.results:
        results = read_results(args.results)
    else:
        combos = [f"{a.value}+{b}" for a in Phase1Design for b in ("ts", "bop2", "top")]
        results = run_batch(scenarios, combos, reps=args.reps, seed=args.seed,
                            parallelism=args.parallelism)
        if args.save:
            write_results(results, args.save)
    oc = {(s.scenario.split("-")[-1], s.p1_design, s.p2_design): s
          for s in summarize(results, scenarios)}
    ref = json.loads(REFERENCE.read_text())

    flagged = 0
    for sc in map(str, range(1, 10)):
        print(f"\nscenario {sc}: Phase I")
        print(f"{'':13}" + "".join(f"{m:>15}" for m in PHASE1))
        for p1 in (d.value for d in Phase1Design):
            row = [cell(oc[(sc, p1, "bop2")], m, ref["phase1"][sc][p1].get(m), t)
                   for m, t in PHASE1.items()]
            flagged += sum(c.endswith("*") for c in row)
            print(f"{p1:13}" + "".join(f"{c:>15}" for c in row))
        print(f"scenario {sc}: overall")
        print(f"{'':18}" + "".join(f"{m:>15}" for m in OVERALL))
        for p1 in (d.value for d in Phase1Design):
            for p2 in ("ts", "bop2", "top"):
                row = [cell(oc[(sc, p1, p2)], m, ref["overall"][sc][p1][p2].get(m), t)
                       for m, t in OVERALL.items()]
                flagged += sum(c.endswith("*") for c in row)
                print(f"{p1 + '+' + p2:18}" + "".join(f"{c:>15}" for c in row))
    print(f"\n{flagged} cells outside their acceptance band")


if __name__ == "__main__":
    main()
