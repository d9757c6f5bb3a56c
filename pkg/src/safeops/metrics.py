"""Exact evaluation against the true kernel and mean costs: regret, positive
constraint violation, per-episode safety and growth-exponent fits."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .model import (MixturePolicy, OccupancyMeasure, TransitionKernel,
                    occupancy_from_policy)
from .opt.offline import OfflineSolution, solve_offline_opt
from .opt.polytope import OccupancyPolytope

SAFETY_TOL = 1e-9


class OccupancyCache:
    """Small LRU of exact occupancies keyed by policy identity.

    A mixture is computed in one batched pass over its flattened components,
    so a strictly feasible mixture of thousands of played policies is paid for
    once.  Entries hold a reference to their policy, so an identity cannot be
    reused while cached.
    """

    def __init__(self, kernel: TransitionKernel, maxsize: int = 8):
        self.kernel = kernel
        self.maxsize = maxsize
        self._store = OrderedDict()

    def get(self, pi) -> np.ndarray:
        key = id(pi)
        hit = self._store.get(key)
        if hit is not None and hit[0] is pi:
            self._store.move_to_end(key)
            return hit[1]
        q = occupancy_from_policy(self.kernel, pi).q
        self._store[key] = (pi, q)
        if len(self._store) > self.maxsize:
            self._store.popitem(last=False)
        return q


def exact_episode_occupancy(kernel: TransitionKernel, pi, cache: OccupancyCache | None = None
                            ) -> OccupancyMeasure:
    """``q^{P, pi}`` for a Markov policy or a mixture (weighted average)."""
    if cache is None:
        return occupancy_from_policy(kernel, pi)
    if isinstance(pi, MixturePolicy):
        # the weights change every episode, so only components are cached
        q = sum(w * cache.get(c) for c, w in zip(pi.components, pi.weights))
        return OccupancyMeasure(kernel.space, q)
    return OccupancyMeasure(kernel.space, cache.get(pi))


def baseline(instance) -> OfflineSolution:
    """Best fixed constraint-satisfying occupancy for the average loss."""
    sol = solve_offline_opt(instance.loss_schedule.mean(), instance.G_bar, instance.alpha,
                            OccupancyPolytope.from_kernel(instance.kernel))
    if not sol.feasible:
        raise ValueError(f"baseline LP is {sol.status}; the instance has no feasible policy")
    return sol


def _sa(occupancies, space):
    """Stack occupancies into a ``(T, n_states, A)`` array."""
    if isinstance(occupancies, np.ndarray) and occupancies.ndim == 3:
        return occupancies
    out = []
    for q in occupancies:
        if isinstance(q, OccupancyMeasure):
            out.append(q.state_action())
        else:
            q = np.asarray(q, dtype=float)
            if q.ndim == 1 and space is None:
                raise ValueError("triple-indexed occupancies need the state space")
            out.append(space.triples_to_sa(q) if q.ndim == 1 else q)
    return np.stack(out)


def compute_regret(schedule, occupancies, instance, base: OfflineSolution | None = None):
    """Per-episode ``l_t^T (q_t - q*)`` and its running sum.

    Returns ``(per_episode, cumulative, base)``.
    """
    base = base or baseline(instance)
    q = _sa(occupancies, instance.space)
    T = q.shape[0]
    losses = schedule.losses[:T]
    q_star = base.q.state_action()
    inst = np.einsum("txa,txa->t", losses, q) - np.einsum("txa,xa->t", losses, q_star)
    return inst, np.cumsum(inst), base


def expected_costs(occupancies, G_bar, space=None) -> np.ndarray:
    """``(T, m)`` array of ``G_bar_i^T q_t``."""
    q = _sa(occupancies, space)
    G = np.asarray(G_bar, dtype=float)
    if G.ndim == 2:
        G = G[..., None]
    return np.einsum("txa,xai->ti", q, G)


def violation_from_costs(costs, alpha) -> np.ndarray:
    """``V_t = max_i sum_{tau <= t} [c_{tau,i} - alpha_i]^+`` (max outside the sum)."""
    pos = np.maximum(np.atleast_2d(np.asarray(costs, dtype=float)) - np.atleast_1d(alpha), 0.0)
    return np.cumsum(pos, axis=0).max(axis=1)


def compute_violation(occupancies, G_bar, alpha, space=None) -> np.ndarray:
    return violation_from_costs(expected_costs(occupancies, G_bar, space), alpha)


def safety_from_costs(costs, alpha, tol: float = SAFETY_TOL) -> np.ndarray:
    c = np.atleast_2d(np.asarray(costs, dtype=float))
    return np.all(c <= np.atleast_1d(alpha) + tol, axis=1)


def safety_flags(occupancies, G_bar, alpha, space=None) -> np.ndarray:
    """Per-episode flag ``G_bar_i^T q_t <= alpha_i + 1e-9`` for every ``i``."""
    return safety_from_costs(expected_costs(occupancies, G_bar, space), alpha)


@dataclass
class GrowthFit:
    p_hat: float
    residual: float
    degenerate: bool = False
    n_points: int = 0


def fit_growth_exponent(series, burn_in: float = 0.1) -> GrowthFit:
    """Least-squares slope of ``ln value`` on ``ln t`` after dropping the first
    ``burn_in`` fraction of episodes.

    Non-positive values are dropped; fewer than two remaining points (or an
    all-zero series) gives ``p_hat = 0`` flagged as degenerate.  ``residual`` is
    the RMS of the fit residuals.
    """
    y = np.asarray(series, dtype=float)
    t = np.arange(1, y.size + 1, dtype=float)
    start = int(np.floor(burn_in * y.size))
    t, y = t[start:], y[start:]
    keep = y > 0
    if keep.sum() < 2:
        return GrowthFit(0.0, 0.0, True, int(keep.sum()))
    lt, ly = np.log(t[keep]), np.log(y[keep])
    A = np.vstack([lt, np.ones_like(lt)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    return GrowthFit(float(coef[0]), float(np.sqrt(np.mean(resid ** 2))), False, int(keep.sum()))
