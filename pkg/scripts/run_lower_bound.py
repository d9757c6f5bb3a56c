"""SV-OPS on the two-armed lower-bound bandit (constraint-tight instance).

    python scripts/run_lower_bound.py --T 20000 --rho 0.1 --seeds 0-19 --out runs/lower_bound
"""
import argparse
import statistics

from safeops.bench import ExperimentConfig, run_experiment, write_plot_template
from safeops.env import lower_bound_instances


def seed_range(s):
    lo, _, hi = s.partition("-")
    return list(range(int(lo), int(hi or lo) + 1))


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--T", type=int, default=20_000)
    p.add_argument("--rho", type=float, default=0.1)
    p.add_argument("--seeds", default="0-19")
    p.add_argument("--which", choices=["i1", "i2"], default="i2")
    p.add_argument("--oracle", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="runs/lower_bound")
    args = p.parse_args()

    i1, i2 = lower_bound_instances(args.T, args.rho)
    inst = i2 if args.which == "i2" else i1
    cfg = ExperimentConfig(instance=inst, algo="svops", seeds=seed_range(args.seeds),
                           oracle_confidence=args.oracle, workers=args.workers, out=args.out)
    recs = [r for r in run_experiment(cfg) if r["status"] == "ok"]
    write_plot_template(args.out)
    for r in recs:
        print(f"seed {r['seed']:>3}  R_T {r['R_T']:9.2f}  V_T {r['V_T']:8.3f}  "
              f"p_R {r['p_hat_regret']:.3f}  p_V {r['p_hat_violation']:.3f}")
    print("median V_T/T", statistics.median(r["V_T"] / args.T for r in recs))


if __name__ == "__main__":
    main()
