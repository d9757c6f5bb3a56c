"""Command line: ``safeops run | gen-lower-bound | baseline``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bench import ExperimentConfig, run_experiment, write_plot_template
from .env import lower_bound_instances
from .io import load_instance, load_losses, save_instance, save_losses
from .metrics import baseline


def _floats(s):
    return [float(v) for v in s.split(",")] if s else None


def _ints(s):
    return [int(v) for v in s.split(",")]


def cmd_run(args):
    pi = args.pi_diamond
    cfg = ExperimentConfig(
        instance=args.instance, algo=args.algo, T=args.T, delta=args.delta, eta=args.eta,
        gamma=args.gamma, seeds=_ints(args.seeds), pi_diamond=pi, beta=_floats(args.beta),
        cp=args.cp, cd=args.cd, cdelta=args.cdelta, full_sums=not args.literal_sums,
        oracle_confidence=args.oracle_confidence, out=args.out,
        checkpoint_every=args.checkpoint_every, workers=args.workers)
    records = run_experiment(cfg)
    write_plot_template(args.out)
    failed = 0
    for r in records:
        if r["status"] != "ok":
            failed += 1
            print(f"seed {r['seed']}: {r['status']} {r.get('error', '')}")
            continue
        extra = ""
        if "t_bar" in r:
            extra = f" t_bar={r['t_bar']} rho_hat={r['rho_hat']}"
        print(f"seed {r['seed']}: R_T={r['R_T']:.6g} V_T={r['V_T']:.6g} "
              f"safe={r['safe_run']} p_R={r['p_hat_regret']:.3f}{extra}")
    return 1 if failed == len(records) else 0


def cmd_gen_lower_bound(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for inst in lower_bound_instances(args.T, args.rho):
        losses = f"{inst.name}_losses.csv"
        save_losses(out / losses, inst.loss_schedule)
        save_instance(out / f"{inst.name}.json", inst, {"file": losses})
        print(out / f"{inst.name}.json")
    return 0


def cmd_baseline(args):
    inst = load_instance(args.instance)
    if args.losses:
        sched = load_losses(args.losses, inst.space)
        inst = type(inst)(inst.space, inst.kernel, sched, inst.cost_dist, inst.alpha,
                          sched.horizon, inst.name)
    sol = baseline(inst)
    s = inst.space
    q = sol.q.state_action()
    print(f"OPT {sol.value:.12g}")
    print(json.dumps({"OPT": sol.value,
                      "q_star": [{"x": s.state_names[x], "a": s.actions[a], "q": float(q[x, a])}
                                 for x in range(s.n_states - 1) for a in range(s.n_actions)]},
                     indent=1))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="safeops")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run a learner on an instance for several seeds")
    r.add_argument("--instance", required=True)
    r.add_argument("--algo", choices=["svops", "sops", "cvops"], required=True)
    r.add_argument("--T", type=int, default=None)
    r.add_argument("--delta", type=float, default=0.05)
    r.add_argument("--eta", type=float, default=None)
    r.add_argument("--gamma", type=float, default=None)
    r.add_argument("--seeds", default="0")
    r.add_argument("--oracle-confidence", action="store_true",
                   help="inject the true kernel and mean costs (zero-width confidence)")
    r.add_argument("--pi-diamond", default=None, help="policy file, or 'auto' for the Slater LP policy")
    r.add_argument("--beta", default=None, help="comma-separated costs of the safe policy")
    r.add_argument("--cp", type=float, default=None)
    r.add_argument("--cd", type=float, default=None)
    r.add_argument("--cdelta", type=float, default=10.0)
    r.add_argument("--literal-sums", action="store_true",
                   help="CV-OPS: sum the dual losses over steps 1..L-1 only")
    r.add_argument("--checkpoint-every", type=int, default=None)
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run)

    g = sub.add_parser("gen-lower-bound", help="write the two lower-bound bandit instances")
    g.add_argument("--T", type=int, required=True)
    g.add_argument("--rho", type=float, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_lower_bound)

    b = sub.add_parser("baseline", help="print OPT and q* for an instance")
    b.add_argument("--instance", required=True)
    b.add_argument("--losses", default=None)
    b.set_defaults(func=cmd_baseline)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    np.set_printoptions(precision=6)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
