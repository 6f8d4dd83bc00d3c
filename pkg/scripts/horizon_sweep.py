"""Tracking error against the preview horizon on an exactly trackable reference.

The fleet is the desk fleet with every zeta multiplied by --zeta-scale;
a smaller scale weakens the regularisation that biases the optimum away
from perfect tracking.

    python3 scripts/horizon_sweep.py --seeds 0 1 2 3 4 --zeta-scale 1 0.1 0.01
"""

import argparse

from predalloc.harness import ScenarioSpec, run_scenario, tracking_error_pct
from predalloc.model import SimConfig, DESK_FLEET


def fleet_spec(scale: float) -> dict:
    z_lo, z_hi = DESK_FLEET["zeta"]
    r_lo, r_hi = DESK_FLEET["r"]
    lo = {"d_lo": 0.0, "d_hi": 0.0, "r_lo": r_lo, "r_hi": r_hi, "e_lo": 0.0, "e_hi": 0.0, "zeta": z_lo * scale}
    hi = {"d_lo": 0.0, "d_hi": DESK_FLEET["d"][1], "r_lo": r_lo, "r_hi": r_hi, "e_lo": 0.0, "e_hi": DESK_FLEET["e_kwh"][1], "zeta": z_hi * scale}
    return {"linspace": {"lo": lo, "hi": hi}}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--horizons", type=int, nargs="+", default=[1, 3, 5])
    ap.add_argument("--zeta-scale", type=float, nargs="+", default=[1.0])
    ap.add_argument("--ticks", type=int, default=288)
    args = ap.parse_args()
    n_p_max = max(args.horizons)
    print("zeta_scale,seed," + ",".join(f"err_pct_np{n}" for n in args.horizons))
    for scale in args.zeta_scale:
        for seed in args.seeds:
            errs = []
            for n_p in args.horizons:
                cfg = SimConfig(
                    horizon=n_p,
                    ticks=args.ticks,
                    fleet=fleet_spec(scale),
                    signal={"kind": "feasible", "seed": seed, "n_p_max": n_p_max},
                    scale_margin=None,
                    seed=seed,
                )
                errs.append(tracking_error_pct(run_scenario(ScenarioSpec("sweep", cfg)).traces["primal"]))
            print(f"{scale},{seed}," + ",".join(f"{e:.4f}" for e in errs))


if __name__ == "__main__":
    main()
