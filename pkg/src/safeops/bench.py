"""Experiment runner: seeded runs of a learner against a CMDP instance, exact
per-episode metrics, CSV records, summaries and checkpoint/resume."""
from __future__ import annotations

import csv
import io as _io
import json
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .env import run_episode
from .io import load_instance, load_policy, read_json, rng_from_state, rng_state, write_json
from .learners import CVOPS, SOPS, SVOPS, Oracle
from .metrics import OccupancyCache, baseline, exact_episode_occupancy, fit_growth_exponent
from .model import CmdpInstance, Policy, induced_policy
from .opt.offline import slater_margin

ALGOS = ("svops", "sops", "cvops")


@dataclass
class ExperimentConfig:
    instance: object                       # path to an instance file or a CmdpInstance
    algo: str = "svops"
    T: int | None = None                   # defaults to the instance horizon
    delta: float = 0.05
    eta: float | None = None
    gamma: float | None = None
    seeds: list = field(default_factory=lambda: [0])
    pi_diamond: object = None              # path, Policy, or None/"auto" (Slater LP policy)
    beta: object = None
    cp: float | None = None
    cd: float | None = None
    cdelta: float = 10.0
    full_sums: bool = True
    oracle_confidence: bool = False
    out: str = "runs"
    checkpoint_every: int | None = None
    halt_after: int | None = None          # stop early leaving a checkpoint (resume testing)
    workers: int = 1

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.algo not in ALGOS:
            raise ValueError(f"algo must be one of {ALGOS}")
        for ref in (self.instance, self.pi_diamond):
            if isinstance(ref, (str, Path)) and ref != "auto" and not Path(ref).exists():
                raise FileNotFoundError(ref)
        self.seeds = [int(s) for s in self.seeds]

    def load(self) -> CmdpInstance:
        if isinstance(self.instance, CmdpInstance):
            inst = self.instance
            if self.T is not None and self.T > inst.loss_schedule.horizon:
                raise ValueError("T exceeds the loss schedule")
            return inst
        return load_instance(self.instance, self.T)

    def describe(self) -> dict:
        d = asdict(self) if not isinstance(self.instance, CmdpInstance) else {
            k: v for k, v in asdict(self).items() if k not in ("instance", "pi_diamond")}
        if isinstance(self.instance, CmdpInstance):
            d["instance"] = self.instance.name
            d["pi_diamond"] = "policy object" if isinstance(self.pi_diamond, Policy) else self.pi_diamond
        return json.loads(json.dumps(d, default=str))


def safe_policy(inst: CmdpInstance, pi_diamond=None, beta=None):
    """Resolve ``(pi_diamond, beta)``; missing pieces come from the Slater LP
    solution (its induced policy and exact costs)."""
    if isinstance(pi_diamond, (str, Path)) and pi_diamond != "auto":
        pi_diamond = load_policy(pi_diamond, inst.space)
    if pi_diamond is None or pi_diamond == "auto":
        rho, q = slater_margin(inst.kernel, inst.G_bar, inst.alpha)
        if rho is None or rho <= 0:
            raise ValueError("instance has no strictly feasible policy")
        pi_diamond = induced_policy(q)
    if beta is None:
        q = exact_episode_occupancy(inst.kernel, pi_diamond).state_action()
        beta = np.einsum("xa,xai->i", q, inst.G_bar)
    return pi_diamond, np.broadcast_to(np.asarray(beta, dtype=float), inst.alpha.shape).copy()


def make_learner(cfg: ExperimentConfig, inst: CmdpInstance, T: int):
    oracle = Oracle(inst.kernel, inst.G_bar) if cfg.oracle_confidence else None
    if cfg.algo == "svops":
        return SVOPS(inst.space, inst.alpha, T, cfg.delta, cfg.eta, cfg.gamma, oracle)
    if cfg.algo == "sops":
        pi, beta = safe_policy(inst, cfg.pi_diamond, cfg.beta)
        return SOPS(inst.space, inst.alpha, T, cfg.delta, pi, beta, cfg.eta, cfg.gamma, oracle)
    return CVOPS(inst.space, inst.alpha, T, cfg.delta, cfg.cp, cfg.cd, cfg.cdelta, cfg.eta,
                 cfg.gamma, oracle, cfg.full_sums)


def columns(m: int) -> list:
    return (["t", "realized_loss", "expected_loss"]
            + [f"expected_cost_{i + 1}" for i in range(m)]
            + [f"realized_cost_{i + 1}" for i in range(m)]
            + ["regret", "cum_regret"]
            + [f"cum_pos_violation_{i + 1}" for i in range(m)]
            + ["cum_violation", "safe", "lam", "proj_feasible", "phase", "seed", "algo"])


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return f"{float(x):.12g}"


class _Accum:
    """Running totals carried across checkpoints."""

    def __init__(self, m):
        self.cum_regret = 0.0
        self.pos = np.zeros(m)
        self.all_safe = True
        self.n_infeasible = 0
        self.pessimism_ok = True
        self.last_phase = None
        self.realized_cost = np.zeros(m)

    def state(self):
        return {"cum_regret": self.cum_regret, "pos": self.pos.tolist(), "all_safe": self.all_safe,
                "n_infeasible": self.n_infeasible, "pessimism_ok": self.pessimism_ok,
                "realized_cost": self.realized_cost.tolist()}

    def load(self, d):
        self.cum_regret = float(d["cum_regret"])
        self.pos = np.asarray(d["pos"], dtype=float)
        self.all_safe = bool(d["all_safe"])
        self.n_infeasible = int(d["n_infeasible"])
        self.pessimism_ok = bool(d["pessimism_ok"])
        self.realized_cost = np.asarray(d["realized_cost"], dtype=float)


def run_seed(cfg: ExperimentConfig, seed: int, inst: CmdpInstance | None = None,
             base=None) -> dict:
    """One seeded run writing ``<algo>_seed<seed>.csv``; resumes from a
    checkpoint left by an interrupted run."""
    inst = inst or cfg.load()
    T = cfg.T or inst.horizon
    base = base or baseline(inst)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{cfg.algo}_seed{seed}"
    final, part, ckpt = out / f"{stem}.csv", out / f"{stem}.csv.part", out / f"{stem}.ckpt.json"

    learner = make_learner(cfg, inst, T)
    m = inst.m
    acc = _Accum(m)
    cache = OccupancyCache(inst.kernel)
    loss_star = np.einsum("txa,xa->t", inst.loss_schedule.losses[:T], base.q.state_action())
    G = inst.G_bar
    cols = columns(m)
    regret_series = np.zeros(T)
    viol_series = np.zeros(T)

    if ckpt.exists() and part.exists():
        state = read_json(ckpt)
        learner.load_state_dict(state["learner"])
        rng = rng_from_state(state["rng"])
        acc.load(state["acc"])
        t0 = int(state["t"])
        regret_series[:t0] = state["regret_series"]
        viol_series[:t0] = state["viol_series"]
        f = open(part, "r+b")
        f.truncate(int(state["offset"]))
        f.seek(int(state["offset"]))
    else:
        rng = np.random.default_rng(seed)
        t0 = 0
        f = open(part, "wb")
        f.write((",".join(cols) + "\n").encode())

    started = time.perf_counter()
    halted = False
    try:
        for t in range(t0 + 1, T + 1):
            pi = learner.policy
            q = exact_episode_occupancy(inst.kernel, pi, cache).state_action()
            loss_t = inst.loss_schedule.at(t)
            exp_loss = float(np.sum(loss_t * q))
            exp_cost = np.einsum("xa,xai->i", q, G)
            lam = getattr(learner, "lam", 0.0)
            if isinstance(learner, CVOPS):
                lam = learner.nested.lam if learner.phase == "running" else float("nan")
            phase = getattr(learner, "phase", "running")
            traj = run_episode(inst, t, pi, rng)
            diag = learner.step(traj)

            regret = exp_loss - loss_star[t - 1]
            acc.cum_regret += regret
            acc.pos += np.maximum(exp_cost - inst.alpha, 0.0)
            safe = bool(np.all(exp_cost <= inst.alpha + 1e-9))
            acc.all_safe &= safe
            acc.n_infeasible += not diag["proj_feasible"]
            acc.pessimism_ok &= bool(diag.get("pessimism_ok", True))
            acc.realized_cost += traj.costs.sum(axis=0)
            regret_series[t - 1] = acc.cum_regret
            viol_series[t - 1] = acc.pos.max()
            row = ([t, float(traj.losses.sum()), exp_loss] + list(exp_cost)
                   + list(traj.costs.sum(axis=0)) + [regret, acc.cum_regret] + list(acc.pos)
                   + [acc.pos.max(), safe, lam, bool(diag["proj_feasible"]), phase, seed, cfg.algo])
            f.write((",".join(_fmt(v) for v in row) + "\n").encode())

            if cfg.checkpoint_every and t % cfg.checkpoint_every == 0 and t < T:
                f.flush()
                write_json(ckpt, {"t": t, "offset": f.tell(), "learner": learner.state_dict(),
                                  "rng": rng_state(rng), "acc": acc.state(),
                                  "regret_series": regret_series[:t].tolist(),
                                  "viol_series": viol_series[:t].tolist()})
                if cfg.halt_after is not None and t >= cfg.halt_after:
                    halted = True
                    break
    finally:
        f.close()
    wall = time.perf_counter() - started
    if halted:
        return {"seed": seed, "status": "halted", "t": t}
    os.replace(part, final)
    if ckpt.exists():
        ckpt.unlink()

    half = 0.5
    fit_r = fit_growth_exponent(regret_series, burn_in=half)
    fit_v = fit_growth_exponent(viol_series, burn_in=half)
    rec = {"seed": seed, "status": "ok", "algo": cfg.algo, "T": T, "OPT": base.value,
           "R_T": acc.cum_regret, "V_T": float(acc.pos.max()), "safe_run": acc.all_safe,
           "n_proj_infeasible": acc.n_infeasible, "pessimism_ok": acc.pessimism_ok,
           "p_hat_regret": fit_r.p_hat, "p_hat_regret_degenerate": fit_r.degenerate,
           "p_hat_violation": fit_v.p_hat, "p_hat_violation_degenerate": fit_v.degenerate,
           "realized_violation": float(np.max(acc.realized_cost - T * inst.alpha)),
           "wall_time": wall, "csv": final.name}
    if isinstance(learner, CVOPS):
        rec["t_bar"] = learner.t_bar
        rec["rho_hat"] = learner.rho_hat
        rec["V_at_t_bar"] = float(viol_series[learner.t_bar - 1]) if learner.t_bar else None
    return rec


def _run_seed_safe(cfg, seed, inst=None, base=None):
    try:
        return run_seed(cfg, seed, inst, base)
    except Exception as e:                    # one bad seed must not abort the batch
        return {"seed": seed, "status": "error", "error": f"{type(e).__name__}: {e}",
                "traceback": traceback.format_exc()}


SUMMARY_KEYS = ("seed", "status", "R_T", "V_T", "safe_run", "p_hat_regret", "p_hat_violation",
                "t_bar", "rho_hat", "n_proj_infeasible", "pessimism_ok", "wall_time", "error")


def run_experiment(cfg: ExperimentConfig) -> list:
    """Run every seed, then write ``summary.json``, ``summary.csv`` and ``meta.json``."""
    inst = cfg.load()
    base = baseline(inst)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            futs = [ex.submit(_run_seed_safe, cfg, s, inst, base) for s in cfg.seeds]
            records = [fu.result() for fu in futs]
    else:
        records = [_run_seed_safe(cfg, s, inst, base) for s in cfg.seeds]
    write_json(out / "meta.json", {"config": cfg.describe(), "instance": inst.name,
                                   "loss_schedule": {"kind": inst.loss_schedule.kind,
                                                     "params": inst.loss_schedule.params},
                                   "OPT": base.value})
    write_json(out / "summary.json", records)
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_KEYS)
    for r in records:
        w.writerow(["" if r.get(k) is None else _fmt(r[k]) for k in SUMMARY_KEYS])
    tmp = out / "summary.csv.part"
    tmp.write_text(buf.getvalue())
    os.replace(tmp, out / "summary.csv")
    return records


def read_run(path) -> dict:
    """Load a per-seed CSV into a dict of arrays (numeric where possible)."""
    with open(path) as f:
        rows = list(csv.reader(f))
    head, body = rows[0], rows[1:]
    out = {}
    for j, name in enumerate(head):
        col = [r[j] for r in body]
        try:
            out[name] = np.array([float(v) for v in col])
        except ValueError:
            out[name] = np.array(col)
    return out


PLOT_TEMPLATE = '''"""Plot cumulative regret and violation from a run directory.

Usage: python plot_runs.py RUN_DIR   (needs matplotlib)
"""
import csv
import glob
import sys

import matplotlib.pyplot as plt

run_dir = sys.argv[1] if len(sys.argv) > 1 else "."
fig, axes = plt.subplots(1, 2, figsize=(10, 4))
for path in sorted(glob.glob(f"{run_dir}/*_seed*.csv")):
    with open(path) as f:
        rows = list(csv.DictReader(f))
    t = [int(r["t"]) for r in rows]
    axes[0].plot(t, [float(r["cum_regret"]) for r in rows], lw=0.8)
    axes[1].plot(t, [float(r["cum_violation"]) for r in rows], lw=0.8)
axes[0].set(xlabel="episode", ylabel="cumulative regret")
axes[1].set(xlabel="episode", ylabel="cumulative violation")
fig.tight_layout()
fig.savefig(f"{run_dir}/curves.png", dpi=150)
'''


def write_plot_template(out):
    path = Path(out) / "plot_runs.py"
    path.write_text(PLOT_TEMPLATE)
    return path
