"""Offline baseline LP and the Slater margin."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..model import OccupancyMeasure, TransitionKernel
from .polytope import OccupancyPolytope
from .simplex import LPResult, solve_lp_general


@dataclass
class OfflineSolution:
    status: str                  # "optimal" | "infeasible" | solver status
    value: float
    q: OccupancyMeasure | None
    gap: float
    lp: LPResult

    @property
    def feasible(self) -> bool:
        return self.status == "optimal"


def _cost_rows(space, G):
    G = np.asarray(G, dtype=float)
    if G.ndim == 2:
        G = G[..., None]
    return G[space.tx, space.ta].T          # (m, n_triples)


def solve_offline_opt(loss, G, alpha, polytope: OccupancyPolytope) -> OfflineSolution:
    """``min loss^T q`` over ``q`` in the polytope with ``G_i^T q <= alpha_i``.

    ``loss`` is an ``(n_states, A)`` array, ``G`` an ``(n_states, A, m)`` array.
    """
    s = polytope.space
    c = np.asarray(loss, dtype=float)[s.tx, s.ta]
    A_eq, b_eq = polytope.equalities()
    C, d = polytope.inequalities()
    Gr = _cost_rows(s, G)
    A_ub = np.vstack([C, Gr])
    b_ub = np.concatenate([d, np.atleast_1d(np.asarray(alpha, dtype=float))])
    ub = np.where(polytope.fixed_zero, 0.0, 1.0)
    res = solve_lp_general(c, A_ub, b_ub, A_eq, b_eq, ub=ub)
    if not res.optimal:
        return OfflineSolution(res.status, float("nan"), None, float("nan"), res)
    q = np.clip(res.x, 0.0, 1.0)
    return OfflineSolution("optimal", float(c @ q), OccupancyMeasure(s, q), res.gap, res)


def slater_margin(kernel: TransitionKernel, G, alpha):
    """``rho = max_q min_i (alpha_i - G_i^T q)`` over the true occupancy space.

    Returns ``(rho, q)``; ``(None, None)`` if the LP fails.
    """
    s = kernel.space
    poly = OccupancyPolytope.from_kernel(kernel)
    n = s.n_triples
    Gr = _cost_rows(s, G)
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    A_eq, b_eq = poly.equalities()
    C, d = poly.inequalities()
    # variables (q, r) with r = rho + L + 1 >= 0
    shift = s.L + 1.0
    A_ub = np.vstack([np.hstack([C, np.zeros((C.shape[0], 1))]),
                      np.hstack([Gr, np.ones((Gr.shape[0], 1))])])
    b_ub = np.concatenate([d, alpha + shift])
    A_eq = np.hstack([A_eq, np.zeros((A_eq.shape[0], 1))])
    c = np.zeros(n + 1)
    c[-1] = -1.0
    ub = np.concatenate([np.where(poly.fixed_zero, 0.0, 1.0), [np.inf]])
    res = solve_lp_general(c, A_ub, b_ub, A_eq, b_eq, ub=ub)
    if not res.optimal:
        return None, None
    return float(res.x[-1] - shift), OccupancyMeasure(s, np.clip(res.x[:n], 0.0, 1.0))


def shortest_path_value(kernel: TransitionKernel, loss) -> float:
    """Unconstrained minimum expected loss by backward DP."""
    s = kernel.space
    loss = np.asarray(loss, dtype=float)
    V = np.zeros(s.n_states)
    for k in range(s.L - 1, -1, -1):
        xs = s.layer_states(k)
        P = s.layer_block(kernel.p, k)
        nxt = V[s.layer_start[k + 1]:s.layer_start[k + 2]]
        Q = loss[xs.start:xs.stop] + P @ nxt
        V[xs.start:xs.stop] = Q.min(axis=1)
    return float(V[0])
