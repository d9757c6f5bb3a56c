"""Loop-free episodic CMDPs: layered state spaces, kernels, policies and
occupancy measures.

States are indexed ``0..n_states-1`` in layer order, so ``X_0 = {0}`` and
``X_L = {n_states-1}``.  Occupancy measures and kernels are dense vectors over
the layered triple support ``(x, a, x')`` with ``x in X_k, x' in X_{k+1}``,
ordered by layer, then ``x``, then ``a``, then ``x'``.  Hence the triples of a
given ``(x, a)`` form a contiguous block.

State-action vectors (losses, costs, policies) are ``(n_states, n_actions)``
arrays; the terminal row is never used.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence, Union

import numpy as np

VALID_TOL = 1e-9
ARITH_TOL = 1e-12
ZERO_MASS = 1e-12


@dataclass(frozen=True, eq=False)
class LayeredStateSpace:
    layers: tuple
    actions: tuple

    def __post_init__(self):
        layers = tuple(tuple(str(s) for s in layer) for layer in self.layers)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "actions", tuple(str(a) for a in self.actions))
        if len(layers) < 2:
            raise ValueError("need at least two layers")
        if len(layers[0]) != 1 or len(layers[-1]) != 1:
            raise ValueError("first and last layer must be singletons")
        if any(len(layer) == 0 for layer in layers):
            raise ValueError("empty layer")
        names = [s for layer in layers for s in layer]
        if len(set(names)) != len(names):
            raise ValueError("every state must belong to exactly one layer")
        if not self.actions:
            raise ValueError("need at least one action")

    # -- sizes -------------------------------------------------------------
    @property
    def L(self) -> int:
        return len(self.layers) - 1

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @cached_property
    def state_names(self) -> tuple:
        return tuple(s for layer in self.layers for s in layer)

    @property
    def n_states(self) -> int:
        return len(self.state_names)

    @cached_property
    def state_index(self) -> dict:
        return {s: i for i, s in enumerate(self.state_names)}

    @cached_property
    def action_index(self) -> dict:
        return {a: i for i, a in enumerate(self.actions)}

    @cached_property
    def layer_sizes(self) -> np.ndarray:
        return np.array([len(layer) for layer in self.layers])

    @cached_property
    def layer_start(self) -> np.ndarray:
        """First state index of every layer (plus a sentinel)."""
        return np.concatenate([[0], np.cumsum(self.layer_sizes)])

    @cached_property
    def layer_of(self) -> np.ndarray:
        return np.repeat(np.arange(self.L + 1), self.layer_sizes)

    def layer_states(self, k: int) -> range:
        return range(self.layer_start[k], self.layer_start[k + 1])

    # -- triple support ----------------------------------------------------
    @cached_property
    def triple_start(self) -> np.ndarray:
        """Offset of layer k's triples in the flat vector (plus a sentinel)."""
        sizes = self.layer_sizes
        per_layer = sizes[:-1] * self.n_actions * sizes[1:]
        return np.concatenate([[0], np.cumsum(per_layer)])

    @property
    def n_triples(self) -> int:
        return int(self.triple_start[-1])

    @cached_property
    def _triples(self):
        tx, ta, ty = [], [], []
        A = self.n_actions
        for k in range(self.L):
            xs = np.arange(self.layer_start[k], self.layer_start[k + 1])
            ys = np.arange(self.layer_start[k + 1], self.layer_start[k + 2])
            gx, ga, gy = np.meshgrid(xs, np.arange(A), ys, indexing="ij")
            tx.append(gx.ravel())
            ta.append(ga.ravel())
            ty.append(gy.ravel())
        return np.concatenate(tx), np.concatenate(ta), np.concatenate(ty)

    @property
    def tx(self) -> np.ndarray:
        return self._triples[0]

    @property
    def ta(self) -> np.ndarray:
        return self._triples[1]

    @property
    def ty(self) -> np.ndarray:
        return self._triples[2]

    @cached_property
    def triple_layer(self) -> np.ndarray:
        return self.layer_of[self.tx]

    @cached_property
    def block_id(self) -> np.ndarray:
        """Index of the (x, a) block each triple belongs to (= x * A + a)."""
        return self.tx * self.n_actions + self.ta

    @cached_property
    def block_matrix(self) -> np.ndarray:
        """``B[j, i] = 1`` iff triples j and i share the same (x, a)."""
        b = self.block_id
        return (b[:, None] == b[None, :]).astype(float)

    @cached_property
    def successors_per_triple(self) -> np.ndarray:
        return self.layer_sizes[self.triple_layer + 1]

    def triple_index(self, x: int, a: int, y: int) -> int:
        k = self.layer_of[x]
        nxt = self.layer_sizes[k + 1]
        return int(self.triple_start[k]
                   + ((x - self.layer_start[k]) * self.n_actions + a) * nxt
                   + (y - self.layer_start[k + 1]))

    def layer_block(self, vec: np.ndarray, k: int) -> np.ndarray:
        """View of a triple vector's layer k as ``(|X_k|, A, |X_{k+1}|)``."""
        s = self.layer_sizes
        return vec[self.triple_start[k]:self.triple_start[k + 1]].reshape(
            s[k], self.n_actions, s[k + 1])

    def sa_to_triples(self, w: np.ndarray) -> np.ndarray:
        """Broadcast a state-action array onto the triple support."""
        return w[self.tx, self.ta]

    def triples_to_sa(self, vec: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n_states * self.n_actions)
        np.add.at(out, self.block_id, vec)
        return out.reshape(self.n_states, self.n_actions)

    def uniform_occupancy(self) -> "OccupancyMeasure":
        s = self.layer_sizes
        per = 1.0 / (s[self.triple_layer] * self.n_actions * s[self.triple_layer + 1])
        return OccupancyMeasure(self, per)

    def __repr__(self):
        return f"LayeredStateSpace(L={self.L}, |X|={self.n_states}, |A|={self.n_actions})"


def _check_space(space, other):
    if space is not other and (space.layers != other.layers or space.actions != other.actions):
        raise ValueError("objects defined on different state spaces")


@dataclass(frozen=True, eq=False)
class TransitionKernel:
    space: LayeredStateSpace
    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).copy()
        if p.shape != (self.space.n_triples,):
            raise ValueError(f"kernel must have {self.space.n_triples} entries")
        if np.any(p < -ARITH_TOL) or np.any(p > 1 + ARITH_TOL):
            raise ValueError("transition probabilities must lie in [0, 1]")
        sums = self.space.triples_to_sa(p)[self.space.layer_of < self.space.L]
        if np.max(np.abs(sums - 1.0)) > ARITH_TOL:
            raise ValueError("transition rows must sum to one")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    @classmethod
    def from_dense(cls, space, P):
        """Build from a dense ``(n_states, A, n_states)`` array."""
        P = np.asarray(P, dtype=float)
        off = P.copy()
        off[space.tx, space.ta, space.ty] = 0.0
        if np.any(np.abs(off) > 0):
            raise ValueError("kernel has mass outside the layer graph")
        return cls(space, P[space.tx, space.ta, space.ty])

    def dense(self) -> np.ndarray:
        s = self.space
        P = np.zeros((s.n_states, s.n_actions, s.n_states))
        P[s.tx, s.ta, s.ty] = self.p
        return P

    def row(self, x: int, a: int) -> np.ndarray:
        s = self.space
        k = s.layer_of[x]
        return s.layer_block(self.p, k)[x - s.layer_start[k], a]


@dataclass(frozen=True, eq=False)
class Policy:
    """Markov policy; ``pi[x, a]`` is the probability of ``a`` at ``x``.

    ``degenerate`` lists states where the policy was filled in uniformly
    because the occupancy it was induced from had no mass there.
    """
    space: LayeredStateSpace
    pi: np.ndarray
    degenerate: tuple = ()

    def __post_init__(self):
        s = self.space
        pi = np.asarray(self.pi, dtype=float).copy()
        if pi.shape != (s.n_states, s.n_actions):
            raise ValueError("policy shape mismatch")
        pi[-1] = 1.0 / s.n_actions
        if np.any(pi < -ARITH_TOL) or np.any(pi > 1 + ARITH_TOL):
            raise ValueError("policy entries must lie in [0, 1]")
        if np.max(np.abs(pi.sum(axis=1) - 1.0)) > ARITH_TOL:
            raise ValueError("policy rows must sum to one")
        pi.setflags(write=False)
        object.__setattr__(self, "pi", pi)

    @classmethod
    def uniform(cls, space):
        return cls(space, np.full((space.n_states, space.n_actions), 1.0 / space.n_actions))

    @classmethod
    def deterministic(cls, space, choice: Sequence[int]):
        pi = np.zeros((space.n_states, space.n_actions))
        pi[np.arange(len(choice)), np.asarray(choice)] = 1.0
        if len(choice) < space.n_states:
            pi[len(choice):] = 1.0 / space.n_actions
        return cls(space, pi)


@dataclass(frozen=True, eq=False)
class MixturePolicy:
    """Episode-level randomisation over policies (a non-Markovian policy)."""
    components: tuple
    weights: np.ndarray

    def __post_init__(self):
        comps = tuple(self.components)
        w = np.asarray(self.weights, dtype=float).copy()
        if len(comps) == 0 or w.shape != (len(comps),):
            raise ValueError("need one weight per component")
        if np.any(w < 0) or abs(w.sum() - 1.0) > ARITH_TOL:
            raise ValueError("mixture weights must form a distribution")
        for c in comps[1:]:
            _check_space(comps[0].space, c.space)
        w.setflags(write=False)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", w)

    @property
    def space(self) -> LayeredStateSpace:
        return self.components[0].space

    @classmethod
    def uniform(cls, policies):
        n = len(policies)
        return cls(tuple(policies), np.full(n, 1.0 / n))

    @cached_property
    def mean_action_probs(self) -> np.ndarray:
        """Weight-averaged action probabilities (not the mixture's behaviour)."""
        return sum(w * _mean_pi(c) for c, w in zip(self.components, self.weights))


AnyPolicy = Union[Policy, MixturePolicy]


def _mean_pi(p):
    return p.pi if isinstance(p, Policy) else p.mean_action_probs


@dataclass(frozen=True, eq=False)
class OccupancyMeasure:
    space: LayeredStateSpace
    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).copy()
        if q.shape != (self.space.n_triples,):
            raise ValueError(f"occupancy must have {self.space.n_triples} entries")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    def state_action(self) -> np.ndarray:
        """q(x, a) as an ``(n_states, A)`` array."""
        return self.space.triples_to_sa(self.q)

    def state(self) -> np.ndarray:
        """q(x); the terminal state carries the last layer's inflow."""
        s = self.space
        out = self.state_action().sum(axis=1)
        out[-1] = self.q[s.triple_start[s.L - 1]:].sum()
        return out

    def dense(self) -> np.ndarray:
        s = self.space
        D = np.zeros((s.n_states, s.n_actions, s.n_states))
        D[s.tx, s.ta, s.ty] = self.q
        return D


@dataclass
class Violation:
    kind: str          # "structure" | "range" | "normalization" | "flow" | "kernel"
    where: str
    residual: float


@dataclass
class OccupancyReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> set:
        return {v.kind for v in self.violations}

    def __bool__(self):
        return self.ok


def validate_occupancy(q, space: LayeredStateSpace, kernel: TransitionKernel | None = None,
                       tol: float = VALID_TOL) -> OccupancyReport:
    """Check the valid-occupancy conditions (normalisation, flow, and
    optionally ``P^q = P``).

    ``q`` may be an :class:`OccupancyMeasure`, a flat triple vector, or a dense
    ``(n_states, A, n_states)`` array; mass on triples outside the layer graph
    is reported as a ``structure`` violation.
    """
    rep = OccupancyReport()
    if isinstance(q, OccupancyMeasure):
        _check_space(space, q.space)
        vec = q.q
    else:
        arr = np.asarray(q, dtype=float)
        if arr.shape == (space.n_states, space.n_actions, space.n_states):
            off = arr.copy()
            off[space.tx, space.ta, space.ty] = 0.0
            bad = np.argwhere(np.abs(off) > tol)
            for x, a, y in bad:
                rep.violations.append(Violation(
                    "structure", f"({space.state_names[x]},{space.actions[a]},{space.state_names[y]})",
                    float(abs(off[x, a, y]))))
            vec = arr[space.tx, space.ta, space.ty]
        elif arr.shape == (space.n_triples,):
            vec = arr
        else:
            rep.violations.append(Violation("structure", f"shape {arr.shape}", float("inf")))
            return rep

    lo, hi = vec.min(), vec.max()
    if lo < -tol or hi > 1 + tol:
        rep.violations.append(Violation("range", "entries", float(max(-lo, hi - 1, 0.0))))

    for k in range(space.L):
        mass = vec[space.triple_start[k]:space.triple_start[k + 1]].sum()
        if abs(mass - 1.0) > tol:
            rep.violations.append(Violation("normalization", f"layer {k}", float(abs(mass - 1.0))))

    out_sa = space.triples_to_sa(vec).sum(axis=1)
    inflow = np.zeros(space.n_states)
    np.add.at(inflow, space.ty, vec)
    for x in range(space.layer_start[1], space.layer_start[space.L]):
        r = abs(out_sa[x] - inflow[x])
        if r > tol:
            rep.violations.append(Violation("flow", space.state_names[x], float(r)))

    if kernel is not None:
        _check_space(space, kernel.space)
        q_sa = space.sa_to_triples(space.triples_to_sa(vec))
        r = np.abs(vec - kernel.p * q_sa)
        if r.max() > tol:
            j = int(np.argmax(r))
            rep.violations.append(Violation(
                "kernel", f"({space.state_names[space.tx[j]]},{space.actions[space.ta[j]]},"
                          f"{space.state_names[space.ty[j]]})", float(r[j])))
    return rep


def _occupancy_batch(kernel: TransitionKernel, pis: np.ndarray) -> np.ndarray:
    """Forward DP for a stack of Markov policies ``(n, n_states, A)``."""
    s = kernel.space
    n = pis.shape[0]
    reach = np.zeros((n, s.n_states))
    reach[:, 0] = 1.0
    out = np.empty((n, s.n_triples))
    for k in range(s.L):
        xs = slice(s.layer_start[k], s.layer_start[k + 1])
        P = s.layer_block(kernel.p, k)
        blk = reach[:, xs, None, None] * pis[:, xs, :, None] * P[None]
        out[:, s.triple_start[k]:s.triple_start[k + 1]] = blk.reshape(n, -1)
        reach[:, s.layer_start[k + 1]:s.layer_start[k + 2]] = blk.sum(axis=(1, 2))
    return out


def _flatten_mixture(pi, weight=1.0):
    if isinstance(pi, Policy):
        yield pi, weight
    else:
        for c, w in zip(pi.components, pi.weights):
            yield from _flatten_mixture(c, weight * w)


def occupancy_from_policy(kernel: TransitionKernel, pi: AnyPolicy) -> OccupancyMeasure:
    """Exact occupancy measure ``q^{P, pi}``; mixtures give the weighted average."""
    _check_space(kernel.space, pi.space)
    if isinstance(pi, Policy):
        return OccupancyMeasure(kernel.space, _occupancy_batch(kernel, pi.pi[None])[0])
    parts = list(_flatten_mixture(pi))
    pis = np.stack([p.pi for p, _ in parts])
    w = np.array([w for _, w in parts])
    return OccupancyMeasure(kernel.space, w @ _occupancy_batch(kernel, pis))


def induced_policy(q: OccupancyMeasure) -> Policy:
    s = q.space
    q_sa = q.state_action()
    q_x = q_sa.sum(axis=1, keepdims=True)
    zero = (q_x[:, 0] < ZERO_MASS)
    zero[-1] = False
    pi = np.where(q_x >= ZERO_MASS, q_sa / np.maximum(q_x, ZERO_MASS), 1.0 / s.n_actions)
    # renormalise away round-off so the Policy invariant holds exactly
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum(axis=1, keepdims=True)
    return Policy(s, pi, degenerate=tuple(int(x) for x in np.flatnonzero(zero)))


def induced_transition(q: OccupancyMeasure) -> TransitionKernel:
    s = q.space
    q_sa = s.sa_to_triples(q.state_action())
    uniform = 1.0 / s.successors_per_triple
    p = np.where(q_sa >= ZERO_MASS, q.q / np.maximum(q_sa, ZERO_MASS), uniform)
    p = np.clip(p, 0.0, 1.0)
    sums = s.sa_to_triples(s.triples_to_sa(p))
    return TransitionKernel(s, p / sums)


def expected_value(q: OccupancyMeasure, w: np.ndarray):
    """``sum_{x,a} w(x,a) q(x,a)``; a trailing constraint axis on ``w`` gives a vector."""
    q_sa = q.state_action()
    w = np.asarray(w, dtype=float)
    if w.ndim == 2:
        return float(np.sum(w * q_sa))
    return np.einsum("xa,xai->i", q_sa, w)


def flatten_to_loopfree(P: np.ndarray, start: int, H: int,
                        state_names: Sequence[str] | None = None,
                        action_names: Sequence[str] | None = None):
    """Unroll an episodic MDP with horizon ``H`` into a loop-free one with ``L = H``.

    Layer ``k`` holds the copies ``s@k`` of states reachable at step ``k``; the
    states reached after the last action collapse into a single terminal.
    Returns ``(space, kernel, origin)`` where ``origin[x]`` is the original state
    of layered state ``x`` (``None`` for the terminal).
    """
    if H < 1:
        raise ValueError("horizon must be at least 1")
    P = np.asarray(P, dtype=float)
    S, A, _ = P.shape
    names = list(state_names) if state_names is not None else [f"s{i}" for i in range(S)]
    actions = list(action_names) if action_names is not None else [f"a{i}" for i in range(A)]

    frontier = [start]
    layer_orig = [frontier]
    for _ in range(1, H):
        reach = np.flatnonzero(P[frontier].sum(axis=(0, 1)) > 0)
        frontier = [int(s) for s in reach]
        layer_orig.append(frontier)

    layers = [[f"{names[s]}@{k}" for s in orig] for k, orig in enumerate(layer_orig)]
    layers.append(["end"])
    space = LayeredStateSpace(tuple(map(tuple, layers)), tuple(actions))
    dense = np.zeros((space.n_states, A, space.n_states))
    for k in range(H):
        for i, s in enumerate(layer_orig[k]):
            x = space.layer_start[k] + i
            if k == H - 1:
                dense[x, :, space.n_states - 1] = 1.0
            else:
                for j, s2 in enumerate(layer_orig[k + 1]):
                    dense[x, :, space.layer_start[k + 1] + j] = P[s, :, s2]
    origin = [s for orig in layer_orig for s in orig] + [None]
    return space, TransitionKernel.from_dense(space, dense), origin


@dataclass(frozen=True, eq=False)
class CmdpInstance:
    """A CMDP with hidden kernel, an oblivious loss schedule and stochastic costs."""
    space: LayeredStateSpace
    kernel: TransitionKernel
    loss_schedule: object
    cost_dist: object
    alpha: np.ndarray
    horizon: int
    name: str = "instance"

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float)).copy()
        if alpha.size < 1:
            raise ValueError("need at least one constraint")
        if np.any(alpha < 0) or np.any(alpha > self.space.L):
            raise ValueError("thresholds must lie in [0, L]")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")
        if self.cost_dist.means.shape != (self.space.n_states, self.space.n_actions, alpha.size):
            raise ValueError("cost means shape mismatch")
        alpha.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        _check_space(self.space, self.kernel.space)

    @property
    def m(self) -> int:
        return self.alpha.size

    @property
    def L(self) -> int:
        return self.space.L

    @property
    def G_bar(self) -> np.ndarray:
        return self.cost_dist.means
