"""Learner-environment interaction, loss schedules, cost sampling and
benchmark instance generators."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import (CmdpInstance, LayeredStateSpace, MixturePolicy, Policy,
                    TransitionKernel)

LOSS_KINDS = ("fixed-sequence", "piecewise-stationary", "abrupt-switching")


@dataclass(frozen=True, eq=False)
class LossSchedule:
    """Oblivious loss sequence ``l_1..l_T``, fully generated at construction.

    ``losses[t - 1]`` is the ``(n_states, A)`` loss matrix of episode ``t``.
    ``params`` records how the sequence was produced.
    """
    losses: np.ndarray
    kind: str = "fixed-sequence"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        arr = np.asarray(self.losses, dtype=float).copy()
        if arr.ndim != 3:
            raise ValueError("losses must be (T, n_states, A)")
        if np.any(arr < 0) or np.any(arr > 1):
            raise ValueError("losses must lie in [0, 1]")
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        arr.setflags(write=False)
        object.__setattr__(self, "losses", arr)

    @property
    def horizon(self) -> int:
        return self.losses.shape[0]

    def at(self, t: int) -> np.ndarray:
        """Loss matrix of episode ``t`` (1-indexed)."""
        return self.losses[t - 1]

    def mean(self) -> np.ndarray:
        return self.losses.mean(axis=0)

    @classmethod
    def constant(cls, loss: np.ndarray, T: int):
        loss = np.asarray(loss, dtype=float)
        return cls(np.broadcast_to(loss, (T,) + loss.shape), "fixed-sequence",
                   {"constant": loss.tolist()})

    @classmethod
    def piecewise_stationary(cls, shape, T: int, n_segments: int = 4, noise: float = 0.1,
                             seed: int = 0):
        """Segments with fresh uniform mean losses plus bounded per-episode noise."""
        rng = np.random.default_rng(seed)
        bounds = np.linspace(0, T, n_segments + 1).round().astype(int)
        means = rng.random((n_segments,) + tuple(shape))
        out = np.empty((T,) + tuple(shape))
        for j in range(n_segments):
            seg = slice(bounds[j], bounds[j + 1])
            n = bounds[j + 1] - bounds[j]
            out[seg] = means[j] + noise * rng.uniform(-1, 1, (n,) + tuple(shape))
        return cls(np.clip(out, 0.0, 1.0), "piecewise-stationary",
                   {"T": T, "n_segments": n_segments, "noise": noise, "seed": seed})

    @classmethod
    def abrupt_switching(cls, shape, T: int, period: int = 100, seed: int = 0):
        """Alternates between two random loss matrices every ``period`` episodes."""
        rng = np.random.default_rng(seed)
        a, b = rng.random((2,) + tuple(shape))
        phase = (np.arange(T) // period) % 2
        out = np.where(phase[:, None, None] == 0, a[None], b[None])
        return cls(out, "abrupt-switching", {"T": T, "period": period, "seed": seed})

    @classmethod
    def from_rows(cls, rows: np.ndarray, n_states: int, n_actions: int, source: str = ""):
        """One row of ``n_states * n_actions`` losses per episode."""
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        if rows.shape[1] != n_states * n_actions:
            raise ValueError(f"expected {n_states * n_actions} losses per row")
        return cls(rows.reshape(-1, n_states, n_actions), "fixed-sequence", {"file": source})


@dataclass(frozen=True, eq=False)
class CostDistribution:
    """i.i.d. cost matrices with means ``G_bar[x, a, i]``.

    ``family='bernoulli'`` samples each entry as a Bernoulli with the given mean;
    ``'beta'`` uses a Beta with the same mean and concentration ``kappa``.
    """
    means: np.ndarray
    family: str = "bernoulli"
    kappa: float = 4.0

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float).copy()
        if means.ndim != 3:
            raise ValueError("cost means must be (n_states, A, m)")
        if np.any(means < 0) or np.any(means > 1):
            raise ValueError("cost means must lie in [0, 1]")
        if self.family not in ("bernoulli", "beta"):
            raise ValueError(f"unknown cost family {self.family!r}")
        means.setflags(write=False)
        object.__setattr__(self, "means", means)

    def sample(self, rng: np.random.Generator, states, actions) -> np.ndarray:
        mu = self.means[states, actions]
        if self.family == "bernoulli":
            return (rng.random(mu.shape) < mu).astype(float)
        inner = (mu > 0) & (mu < 1)
        out = mu.copy()
        if inner.any():
            m = mu[inner]
            out[inner] = rng.beta(m * self.kappa, (1 - m) * self.kappa)
        return out


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Bandit feedback of one episode.

    ``states`` has ``L + 1`` entries; ``actions``, ``losses`` and the rows of
    ``costs`` (``(L, m)``) are indexed by step ``k = 0..L-1``.
    """
    states: np.ndarray
    actions: np.ndarray
    losses: np.ndarray
    costs: np.ndarray

    def __len__(self):
        return len(self.actions)

    def steps(self):
        for k in range(len(self.actions)):
            yield (int(self.states[k]), int(self.actions[k]), float(self.losses[k]),
                   self.costs[k], int(self.states[k + 1]))


def resolve_policy(pi, rng: np.random.Generator) -> Policy:
    """Draw the Markov component a (possibly nested) mixture follows this episode."""
    while isinstance(pi, MixturePolicy):
        cdf = np.cumsum(pi.weights)
        j = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        pi = pi.components[min(j, len(pi.components) - 1)]
    return pi


def _draw(probs: np.ndarray, u: float) -> int:
    cdf = np.cumsum(probs)
    j = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return min(j, len(probs) - 1)


def run_episode(instance: CmdpInstance, t: int, pi, rng: np.random.Generator) -> Trajectory:
    """Play one episode of the interaction protocol with policy ``pi``."""
    if not 1 <= t <= instance.loss_schedule.horizon:
        raise ValueError(f"episode {t} outside the loss schedule")
    s = instance.space
    markov = resolve_policy(pi, rng)
    loss = instance.loss_schedule.at(t)
    L = s.L
    u = rng.random(2 * L)
    states = np.empty(L + 1, dtype=np.int64)
    actions = np.empty(L, dtype=np.int64)
    x = 0
    states[0] = 0
    for k in range(L):
        a = _draw(markov.pi[x], u[2 * k])
        row = s.layer_block(instance.kernel.p, k)[x - s.layer_start[k], a]
        y = s.layer_start[k + 1] + _draw(row, u[2 * k + 1])
        actions[k] = a
        states[k + 1] = y
        x = y
    costs = instance.cost_dist.sample(rng, states[:-1], actions)
    return Trajectory(states, actions, loss[states[:-1], actions], costs)


# ---------------------------------------------------------------------------
# instance generators
# ---------------------------------------------------------------------------

def bandit_space(n_actions: int = 2) -> LayeredStateSpace:
    return LayeredStateSpace((("x0",), ("xL",)), tuple(f"a{i + 1}" for i in range(n_actions)))


def lower_bound_epsilon(T: int) -> float:
    return 0.25 * math.sqrt(2.0 / T)


def lower_bound_instances(T: int, rho: float):
    """The two single-state, two-action instances of the Slater-dependence lower bound.

    Rewards ``r(a1) = 1/2, r(a2) = 0`` become losses ``1 - r``; costs are
    Bernoulli, one constraint with threshold 1/2.
    """
    if T < 2:
        raise ValueError("T must be at least 2")
    if not 0 < rho <= 0.5:
        raise ValueError("rho must lie in (0, 1/2]")
    eps = lower_bound_epsilon(T)
    if rho < eps:
        raise ValueError(f"rho={rho} is below epsilon={eps:.6g}; the construction needs rho >= epsilon")
    space = bandit_space(2)
    kernel = TransitionKernel(space, np.ones(space.n_triples))
    loss = np.zeros((2, 2))
    loss[0] = [0.5, 1.0]
    schedule = LossSchedule.constant(loss, T)

    def make(g1, name):
        means = np.zeros((2, 2, 1))
        means[0, :, 0] = [g1, 0.5 - rho]
        return CmdpInstance(space, kernel, schedule, CostDistribution(means), np.array([0.5]), T, name)

    return make(0.5 + eps, "i1"), make(0.5, "i2")


def diamond_space(n_actions: int = 2) -> LayeredStateSpace:
    return LayeredStateSpace((("s",), ("u", "v"), ("f",)), tuple("ab"[:n_actions]) if n_actions <= 2
                             else tuple(f"a{i}" for i in range(n_actions)))


def diamond_instance(T: int, seed: int = 0, loss_kind: str = "piecewise-stationary"):
    """Three-layer Slater benchmark (L = 2, one constraint).

    From ``s`` action ``a`` leads to ``u`` w.p. 0.8 and ``b`` to ``v`` w.p. 0.8.
    The cheapest policy (a at s, a at u, b at v) has expected cost 0.2 against a
    threshold of 1.0, so the Slater parameter is 0.8.  Losses favour the
    expensive actions.
    """
    space = diamond_space()
    P = np.zeros((4, 2, 4))
    P[0, 0, 1:3] = [0.8, 0.2]
    P[0, 1, 1:3] = [0.2, 0.8]
    P[1:3, :, 3] = 1.0
    kernel = TransitionKernel.from_dense(space, P)
    means = np.zeros((4, 2, 1))
    means[0, :, 0] = [0.1, 0.5]
    means[1, :, 0] = [0.05, 0.6]
    means[2, :, 0] = [0.7, 0.3]
    if loss_kind == "piecewise-stationary":
        sched = LossSchedule.piecewise_stationary((4, 2), T, n_segments=4, noise=0.1, seed=seed)
    elif loss_kind == "abrupt-switching":
        sched = LossSchedule.abrupt_switching((4, 2), T, period=max(1, T // 10), seed=seed)
    else:
        loss = np.zeros((4, 2))
        loss[:3] = 1.0 - means[:3, :, 0]
        sched = LossSchedule.constant(loss, T)
    return CmdpInstance(space, kernel, sched, CostDistribution(means), np.array([1.0]), T, "diamond")


def diamond_safe_policy(space=None) -> Policy:
    """Minimum-cost policy of :func:`diamond_instance` (expected cost 0.2)."""
    space = space or diamond_space()
    return Policy.deterministic(space, [0, 0, 1])


class NoSlaterInstance(RuntimeError):
    pass


def random_instance(layer_sizes, n_actions: int, m: int, sparsity: float,
                    rng: np.random.Generator, rho_min: float = 0.05, T: int = 100,
                    loss_kind: str = "piecewise-stationary", max_tries: int = 100) -> CmdpInstance:
    """Random layered CMDP whose Slater parameter is at least ``rho_min``.

    ``sparsity`` is the probability of zeroing a transition entry (each row keeps
    at least one successor and every state stays reachable).
    """
    from .opt.offline import slater_margin

    sizes = [int(n) for n in layer_sizes]
    if any(n < 1 for n in sizes) or sizes[0] != 1 or sizes[-1] != 1:
        raise ValueError("layer sizes must be positive with singleton first/last layers")
    if len(sizes) < 2:
        raise ValueError("need at least two layers")
    names, c = [], 0
    for n in sizes:
        names.append(tuple(f"x{c + i}" for i in range(n)))
        c += n
    space = LayeredStateSpace(tuple(names), tuple(f"a{i}" for i in range(n_actions)))
    L = space.L
    for _ in range(max_tries):
        p = rng.random(space.n_triples) + 0.05
        if sparsity > 0:
            p[rng.random(space.n_triples) < sparsity] = 0.0
        for k in range(L):
            blk = space.layer_block(p, k)
            empty = blk.sum(axis=2) == 0
            if empty.any():
                blk[empty, rng.integers(blk.shape[2])] = 1.0
            unreached = blk.sum(axis=(0, 1)) == 0
            for y in np.flatnonzero(unreached):
                blk[0, 0, y] = 0.5
        p /= space.sa_to_triples(space.triples_to_sa(p))
        kernel = TransitionKernel(space, p)
        means = rng.random((space.n_states, n_actions, m))
        means[-1] = 0.0
        from .model import occupancy_from_policy
        qu = occupancy_from_policy(kernel, Policy.uniform(space)).state_action()
        uniform_cost = np.einsum("xa,xai->i", qu, means)
        alpha = np.clip(uniform_cost * rng.uniform(0.7, 1.1, m) + rho_min, 0.0, L)
        rho, _ = slater_margin(kernel, means, alpha)
        if rho is not None and rho >= rho_min:
            if loss_kind == "piecewise-stationary":
                sched = LossSchedule.piecewise_stationary(
                    (space.n_states, n_actions), T, seed=int(rng.integers(2**31)))
            else:
                sched = LossSchedule.abrupt_switching(
                    (space.n_states, n_actions), T, seed=int(rng.integers(2**31)))
            return CmdpInstance(space, kernel, sched, CostDistribution(means), alpha, T, "random")
    raise NoSlaterInstance("no Slater instance found")
