"""Instance, loss-schedule, policy and checkpoint files (JSON and CSV)."""
from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np

from .env import CostDistribution, LossSchedule
from .model import CmdpInstance, LayeredStateSpace, Policy, TransitionKernel


def _fmt(x) -> str:
    return f"{x:.12g}"


# -- loss schedules ---------------------------------------------------------

def load_losses(path, space: LayeredStateSpace) -> LossSchedule:
    """CSV with one row of ``n_states * A`` losses per episode (row-major in (x, a))."""
    rows = np.loadtxt(path, delimiter=",", ndmin=2)
    return LossSchedule.from_rows(rows, space.n_states, space.n_actions, source=str(path))


def save_losses(path, schedule: LossSchedule):
    rows = schedule.losses.reshape(schedule.horizon, -1)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _schedule_from_ref(ref, space, horizon, base_dir: Path) -> LossSchedule:
    shape = (space.n_states, space.n_actions)
    if isinstance(ref, str):
        ref = {"file": ref}
    if "file" in ref:
        p = Path(ref["file"])
        sched = load_losses(p if p.is_absolute() else base_dir / p, space)
        if sched.horizon < horizon:
            raise ValueError(f"loss file has {sched.horizon} rows, need {horizon}")
        return sched
    kind = ref.get("kind", "piecewise-stationary")
    if kind == "piecewise-stationary":
        return LossSchedule.piecewise_stationary(shape, horizon, int(ref.get("n_segments", 4)),
                                                 float(ref.get("noise", 0.1)), int(ref.get("seed", 0)))
    if kind == "abrupt-switching":
        return LossSchedule.abrupt_switching(shape, horizon, int(ref.get("period", 100)),
                                             int(ref.get("seed", 0)))
    if kind in ("constant", "fixed-sequence"):
        loss = np.zeros(shape)
        for e in ref["losses"]:
            loss[space.state_index[e["x"]], space.action_index[e["a"]]] = float(e["loss"])
        return LossSchedule.constant(loss, horizon)
    raise ValueError(f"unknown loss schedule kind {kind!r}")


# -- instances --------------------------------------------------------------

def instance_from_dict(d: dict, base_dir=".", horizon: int | None = None) -> CmdpInstance:
    """Build a CMDP from the instance document.

    Keys: ``layers``, ``actions``, ``kernel`` (``{x, a, x_next, p}``), ``alpha``,
    ``cost_means`` (``{x, a, i, mean}``), ``loss_schedule`` (file name or
    generator parameters), ``horizon``; optional ``cost_family``, ``name``.
    """
    space = LayeredStateSpace(tuple(tuple(l) for l in d["layers"]), tuple(d["actions"]))
    xi, ai = space.state_index, space.action_index
    P = np.zeros((space.n_states, space.n_actions, space.n_states))
    for e in d["kernel"]:
        P[xi[e["x"]], ai[e["a"]], xi[e.get("x_next", e.get("y"))]] = float(e["p"])
    kernel = TransitionKernel.from_dense(space, P)
    alpha = np.atleast_1d(np.asarray(d["alpha"], dtype=float))
    means = np.zeros((space.n_states, space.n_actions, alpha.size))
    for e in d["cost_means"]:
        means[xi[e["x"]], ai[e["a"]], int(e.get("i", 0))] = float(e["mean"])
    T = int(horizon if horizon is not None else d["horizon"])
    sched = _schedule_from_ref(d["loss_schedule"], space, T, Path(base_dir))
    return CmdpInstance(space, kernel, sched, CostDistribution(means, d.get("cost_family", "bernoulli")),
                        alpha, T, d.get("name", "instance"))


def load_instance(path, horizon: int | None = None) -> CmdpInstance:
    path = Path(path)
    with open(path) as f:
        d = json.load(f)
    return instance_from_dict(d, path.parent, horizon)


def instance_to_dict(inst: CmdpInstance, loss_ref) -> dict:
    s = inst.space
    names, acts = s.state_names, s.actions
    kernel = [{"x": names[x], "a": acts[a], "x_next": names[y], "p": float(p)}
              for x, a, y, p in zip(s.tx, s.ta, s.ty, inst.kernel.p) if p > 0]
    means = inst.G_bar
    cm = [{"x": names[x], "a": acts[a], "i": i, "mean": float(means[x, a, i])}
          for x in range(s.n_states - 1) for a in range(s.n_actions) for i in range(inst.m)]
    return {"name": inst.name, "layers": [list(l) for l in s.layers], "actions": list(acts),
            "kernel": kernel, "alpha": inst.alpha.tolist(), "cost_means": cm,
            "cost_family": inst.cost_dist.family, "loss_schedule": loss_ref, "horizon": inst.horizon}


def save_instance(path, inst: CmdpInstance, loss_ref):
    write_json(path, instance_to_dict(inst, loss_ref))


# -- policies ---------------------------------------------------------------

def load_policy(path, space: LayeredStateSpace) -> Policy:
    """``{"pi": {state: {action: prob}}}``; states left out play uniformly."""
    with open(path) as f:
        d = json.load(f)
    pi = np.full((space.n_states, space.n_actions), 1.0 / space.n_actions)
    for x, row in d["pi"].items():
        pi[space.state_index[x]] = 0.0
        for a, p in row.items():
            pi[space.state_index[x], space.action_index[a]] = float(p)
    return Policy(space, pi)


def save_policy(path, pi: Policy):
    s = pi.space
    d = {"pi": {s.state_names[x]: {s.actions[a]: float(pi.pi[x, a]) for a in range(s.n_actions)}
                for x in range(s.n_states - 1)}}
    write_json(path, d)


# -- generic ----------------------------------------------------------------

def write_json(path, obj):
    """Write atomically via a temporary file."""
    tmp = f"{path}.part"
    with open(tmp, "w") as f:
        json.dump(obj, f, indent=1, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)


def read_json(path):
    with open(path) as f:
        return json.load(f)


def rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def rng_from_state(state: dict) -> np.random.Generator:
    bg = getattr(np.random, state["bit_generator"])()
    bg.state = state
    return np.random.Generator(bg)
