"""S-OPS with a known safe policy on the three-layer diamond instance.

    python scripts/run_diamond_sops.py --T 5000 --seeds 0-19
"""
import argparse

from safeops.bench import ExperimentConfig, run_experiment, write_plot_template
from safeops.env import diamond_instance, diamond_safe_policy
from run_lower_bound import seed_range


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--T", type=int, default=5000)
    p.add_argument("--beta", type=float, default=0.2)
    p.add_argument("--seeds", default="0-19")
    p.add_argument("--losses", default="piecewise-stationary",
                   choices=["piecewise-stationary", "abrupt-switching", "constant"])
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="runs/diamond_sops")
    args = p.parse_args()

    inst = diamond_instance(args.T, loss_kind=args.losses)
    cfg = ExperimentConfig(instance=inst, algo="sops", seeds=seed_range(args.seeds),
                           pi_diamond=diamond_safe_policy(), beta=[args.beta],
                           workers=args.workers, out=args.out)
    recs = [r for r in run_experiment(cfg) if r["status"] == "ok"]
    write_plot_template(args.out)
    for r in recs:
        print(f"seed {r['seed']:>3}  R_T {r['R_T']:9.2f}  safe {r['safe_run']}  "
              f"pessimism ok {r['pessimism_ok']}  infeasible PROJ {r['n_proj_infeasible']}")
    print("safe-run fraction", sum(r["safe_run"] for r in recs) / max(1, len(recs)))


if __name__ == "__main__":
    main()
