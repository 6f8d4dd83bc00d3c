"""Windup scenario: dual ascent against the box-only primal controller.

    python3 scripts/run_s1.py --out results/s1
"""

import argparse
import json

from predalloc.harness import run_scenario, scenario_s1


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/s1")
    ap.add_argument("--ticks", type=int, default=200)
    args = ap.parse_args()
    rep = run_scenario(scenario_s1(ticks=args.ticks))
    rep.write(args.out)
    w = rep.summary["windup"]
    print(json.dumps(w, indent=2, sort_keys=True))
    print(f"dual recovers in {w['dual_recovery_ticks']} ticks, primal in {w['primal_recovery_ticks']}")


if __name__ == "__main__":
    main()
