"""CV-OPS on the diamond instance without knowledge of a safe policy.

    python scripts/run_cvops.py --T 20000 --cp 1 --seeds 0-19
"""
import argparse

from safeops.bench import ExperimentConfig, run_experiment, write_plot_template
from safeops.env import diamond_instance
from safeops.opt.offline import slater_margin
from run_lower_bound import seed_range


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--T", type=int, default=20_000)
    p.add_argument("--cp", type=float, default=1.0, help="primal constant (omit for the default bound)")
    p.add_argument("--cd", type=float, default=None)
    p.add_argument("--literal-sums", action="store_true")
    p.add_argument("--seeds", default="0-19")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="runs/cvops")
    args = p.parse_args()

    inst = diamond_instance(args.T)
    rho, _ = slater_margin(inst.kernel, inst.G_bar, inst.alpha)
    cfg = ExperimentConfig(instance=inst, algo="cvops", seeds=seed_range(args.seeds), cp=args.cp,
                           cd=args.cd, full_sums=not args.literal_sums, workers=args.workers,
                           out=args.out)
    recs = [r for r in run_experiment(cfg) if r["status"] == "ok"]
    write_plot_template(args.out)
    print(f"true Slater parameter {rho:.3f}")
    for r in recs:
        post = r["V_T"] - r["V_at_t_bar"] if r["t_bar"] else float("nan")
        print(f"seed {r['seed']:>3}  t_bar {r['t_bar']}  rho_hat {r['rho_hat']}  "
              f"V_T {r['V_T']:.3f}  V after t_bar {post:.3f}")


if __name__ == "__main__":
    main()
