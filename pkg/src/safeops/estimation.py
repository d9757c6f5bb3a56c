"""Visit counters, cost confidence bounds, transition confidence sets and
upper occupancy bounds."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import LayeredStateSpace, Policy, TransitionKernel


class Counters:
    """``N[x, a]`` visits, ``M[j]`` transits per triple, running cost sums."""

    def __init__(self, space: LayeredStateSpace, m: int):
        self.space = space
        self.m = m
        self.N = np.zeros((space.n_states, space.n_actions), dtype=np.int64)
        self.M = np.zeros(space.n_triples, dtype=np.int64)
        self.cost_sum = np.zeros((space.n_states, space.n_actions, m))

    def copy(self) -> "Counters":
        c = Counters(self.space, self.m)
        c.N[:] = self.N
        c.M[:] = self.M
        c.cost_sum[:] = self.cost_sum
        return c

    def state_dict(self) -> dict:
        return {"N": self.N.tolist(), "M": self.M.tolist(), "cost_sum": self.cost_sum.tolist()}

    def load_state_dict(self, d: dict):
        self.N[:] = np.asarray(d["N"], dtype=np.int64)
        self.M[:] = np.asarray(d["M"], dtype=np.int64)
        self.cost_sum[:] = np.asarray(d["cost_sum"], dtype=float)


def update_counters(counters: Counters, traj) -> Counters:
    """Add one trajectory in place (L increments to N and to M) and return it."""
    s = counters.space
    xs, acts, ys = traj.states[:-1], traj.actions, traj.states[1:]
    if np.any(s.layer_of[xs] != np.arange(s.L)) or np.any(s.layer_of[ys] != np.arange(1, s.L + 1)):
        raise ValueError("trajectory is not layer-consistent")
    np.add.at(counters.N, (xs, acts), 1)
    idx = [s.triple_index(int(x), int(a), int(y)) for x, a, y in zip(xs, acts, ys)]
    np.add.at(counters.M, idx, 1)
    np.add.at(counters.cost_sum, (xs, acts), traj.costs)
    return counters


def _log_term(T, space, delta, m=1):
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return math.log(T * space.n_states * space.n_actions * m / delta)


@dataclass(frozen=True, eq=False)
class CostEstimate:
    """``g_hat[x, a, i]`` running means and widths ``xi[x, a]``."""
    g_hat: np.ndarray
    xi: np.ndarray

    @property
    def optimistic(self) -> np.ndarray:
        """``G_hat - Xi`` as ``(n_states, A, m)``."""
        return self.g_hat - self.xi[..., None]

    @property
    def pessimistic(self) -> np.ndarray:
        return self.g_hat + self.xi[..., None]

    @classmethod
    def oracle(cls, G_bar: np.ndarray):
        G_bar = np.asarray(G_bar, dtype=float)
        return cls(G_bar.copy(), np.zeros(G_bar.shape[:2]))


def cost_bounds(counters: Counters, T: int, delta: float) -> CostEstimate:
    n = np.maximum(1, counters.N)
    g_hat = counters.cost_sum / n[..., None]
    xi = np.minimum(1.0, np.sqrt(4 * _log_term(T, counters.space, delta, counters.m) / n))
    return CostEstimate(g_hat, xi)


@dataclass(frozen=True, eq=False)
class TransitionConfidence:
    """Per-triple intervals ``[p_hat - eps, p_hat + eps]`` clipped to [0, 1]."""
    space: LayeredStateSpace
    p_hat: np.ndarray
    eps: np.ndarray

    @property
    def lower(self) -> np.ndarray:
        return np.clip(self.p_hat - self.eps, 0.0, 1.0)

    @property
    def upper(self) -> np.ndarray:
        return np.clip(self.p_hat + self.eps, 0.0, 1.0)

    def contains(self, kernel: TransitionKernel, tol: float = 0.0) -> bool:
        p = kernel.p
        return bool(np.all(p >= self.lower - tol) and np.all(p <= self.upper + tol))

    @classmethod
    def vacuous(cls, space: LayeredStateSpace):
        return cls(space, np.zeros(space.n_triples), np.ones(space.n_triples))

    @classmethod
    def exact(cls, kernel: TransitionKernel):
        return cls(kernel.space, kernel.p.copy(), np.zeros(kernel.space.n_triples))


def transition_confidence(counters: Counters, T: int, delta: float) -> TransitionConfidence:
    s = counters.space
    n = s.sa_to_triples(counters.N)
    p_hat = counters.M / np.maximum(1, n)
    lt = _log_term(T, s, delta)
    d = np.maximum(1, n - 1)
    eps = 2 * np.sqrt(p_hat * lt / d) + 14 * lt / (3 * d)
    return TransitionConfidence(s, p_hat, eps)


def _robust_values(lo, hi, V):
    """Max of ``p . V[t]`` over ``{lo <= p <= hi, sum p = 1}`` per target row.

    ``lo, hi``: ``(nw, A, ny)``; ``V``: ``(n_tgt, ny)``.  Returns ``(n_tgt, nw, A)``.
    Greedy: fill the lower bounds, then pour the remaining mass into successors
    in decreasing order of value.
    """
    order = np.argsort(-V, axis=1, kind="stable")
    Vs = np.take_along_axis(V, order, axis=1)[:, None, None, :]
    lo_s = lo[:, :, order].transpose(2, 0, 1, 3)
    hi_s = hi[:, :, order].transpose(2, 0, 1, 3)
    budget = 1.0 - lo_s.sum(axis=-1, keepdims=True)
    room = hi_s - lo_s
    before = np.cumsum(room, axis=-1) - room
    add = np.clip(budget - before, 0.0, room)
    return ((lo_s + add) * Vs).sum(axis=-1)


def upper_reach(pis: np.ndarray, conf: TransitionConfidence) -> np.ndarray:
    """``max_{P in conf} Pr[reach x]`` for a stack of policies ``(n, n_states, A)``.

    Computed target by target with a backward robust DP; the maximising kernel
    may differ per target.  Returns ``(n, n_states)``.
    """
    s = conf.space
    lo, hi = conf.lower, conf.upper
    n = pis.shape[0]
    out = np.zeros((n, s.n_states))
    out[:, 0] = 1.0
    for k in range(1, s.L + 1):
        nk = s.layer_sizes[k]
        # V[c, t, y]: policy c, target t, value at layer-j state y
        V = np.broadcast_to(np.eye(nk), (n, nk, nk)).reshape(n * nk, nk)
        for j in range(k - 1, -1, -1):
            lj, hj = s.layer_block(lo, j), s.layer_block(hi, j)
            R = _robust_values(lj, hj, V).reshape(n, nk, lj.shape[0], lj.shape[1])
            pj = pis[:, s.layer_start[j]:s.layer_start[j + 1]]
            V = np.einsum("ctwa,cwa->ctw", R, pj).reshape(n * nk, lj.shape[0])
        out[:, s.layer_start[k]:s.layer_start[k + 1]] = V.reshape(n, nk)
    return np.clip(out, 0.0, 1.0)


def upper_occupancy_bound(pi, conf: TransitionConfidence, max_components: int = 64) -> np.ndarray:
    """``u(x, a) >= max_{P in conf} q^{P, pi}(x, a)`` as an ``(n_states, A)`` array.

    Exact for a Markov policy.  For a mixture the component bounds are
    averaged, which is sound since a max of a sum is at most the sum of maxima.
    Nested mixtures and mixtures with more than ``max_components`` parts use
    ``reach+(x) * pi_bar(a|x)`` with ``reach+`` the max over all policies.
    """
    if isinstance(pi, Policy):
        return _finish(upper_reach(pi.pi[None], conf)[0][:, None] * pi.pi)
    if len(pi.components) > max_components:
        return _finish(upper_reach_any(conf)[:, None] * pi.mean_action_probs)
    u = np.zeros((conf.space.n_states, conf.space.n_actions))
    markov = [(c.pi, w) for c, w in zip(pi.components, pi.weights) if isinstance(c, Policy)]
    if markov:
        pis = np.stack([p for p, _ in markov])
        w = np.array([w for _, w in markov])
        u += np.einsum("c,cx,cxa->xa", w, upper_reach(pis, conf), pis)
    nested = [(c, w) for c, w in zip(pi.components, pi.weights) if not isinstance(c, Policy)]
    if nested:
        reach = upper_reach_any(conf)
        for c, w in nested:
            u += w * reach[:, None] * c.mean_action_probs
    return _finish(u)


def _finish(u):
    u = np.clip(u, 0.0, 1.0)
    u[-1] = 0.0     # the terminal state takes no action
    return u


def upper_reach_any(conf: TransitionConfidence) -> np.ndarray:
    """Max reach probability of each state over kernels in ``conf`` and all policies."""
    s = conf.space
    lo, hi = conf.lower, conf.upper
    out = np.zeros(s.n_states)
    out[0] = 1.0
    for k in range(1, s.L + 1):
        nk = s.layer_sizes[k]
        V = np.eye(nk)
        for j in range(k - 1, -1, -1):
            R = _robust_values(s.layer_block(lo, j), s.layer_block(hi, j), V)
            V = R.max(axis=2)
        out[s.layer_start[k]:s.layer_start[k + 1]] = V[:, 0]
    return np.clip(out, 0.0, 1.0)
