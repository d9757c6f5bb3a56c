"""Shared machinery: the optimistic loss estimator and an OMD learner over the
estimated occupancy space."""
from __future__ import annotations

import math

import numpy as np

from ..estimation import (CostEstimate, Counters, TransitionConfidence, cost_bounds,
                          transition_confidence, update_counters, upper_occupancy_bound)
from ..model import LayeredStateSpace, OccupancyMeasure, induced_policy
from ..opt.kl import SolverFailure, kl_project, kl_project_unconstrained, omd_weight_update
from ..opt.polytope import OccupancyPolytope


def loss_estimator(traj, losses, u, gamma: float, space: LayeredStateSpace) -> np.ndarray:
    """``l_hat(x,a) = l(x,a) / (u(x,a) + gamma)`` on visited pairs, 0 elsewhere.

    ``losses`` holds the observed value at each step of ``traj``.
    """
    out = np.zeros((space.n_states, space.n_actions))
    xs, acts = traj.states[:-1], traj.actions
    out[xs, acts] = np.asarray(losses, dtype=float) / (u[xs, acts] + gamma)
    return out


def default_rate(space: LayeredStateSpace, T: int, delta: float) -> float:
    """``eta = gamma = sqrt(L ln(L|X||A|/delta) / (T |X||A|))``."""
    XA = space.n_states * space.n_actions
    return math.sqrt(space.L * math.log(space.L * XA / delta) / (T * XA))


class Oracle:
    """Exact kernel and mean costs injected in place of the estimates."""

    def __init__(self, kernel, G_bar):
        self.conf = TransitionConfidence.exact(kernel)
        self.cost = CostEstimate.oracle(G_bar)


class OMDLearner:
    """Bandit OMD over the estimated occupancy space (optionally with
    optimistic cost constraints).

    Holds ``q_hat`` (the current occupancy iterate), visit counters and the
    confidence set of the previous episode.
    """

    def __init__(self, space: LayeredStateSpace, m: int, T: int, delta: float,
                 eta: float | None = None, gamma: float | None = None, oracle: Oracle | None = None,
                 alpha=None):
        if not 0 < delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        self.space, self.m, self.T, self.delta = space, m, T, delta
        rate = default_rate(space, T, delta)
        self.eta = rate if eta is None else float(eta)
        self.gamma = rate if gamma is None else float(gamma)
        self.oracle = oracle
        self.alpha = None if alpha is None else np.atleast_1d(np.asarray(alpha, dtype=float))
        self.counters = Counters(space, m)
        self.t = 0
        self._refresh_estimates()
        self.reset_iterate()

    def reset_iterate(self):
        """Start from the uniform triple measure projected onto the current
        feasible set.  Under the vacuous initial confidence set the projection
        is the uniform measure itself; with injected exact confidence it moves
        the first policy into the true feasible set."""
        q = self.space.uniform_occupancy().q.copy()
        self.warm = ()
        if self.oracle is not None:
            poly = OccupancyPolytope.from_confidence(self.conf)
            res = None
            if self.alpha is not None:
                res = kl_project(q, self.cost.g_hat, self.cost.xi, self.alpha, poly)
            if res is None or not res.feasible:
                res = kl_project_unconstrained(q, poly)
            q = res.q.q.copy()
        self.q_hat = q
        self._hat_policy = induced_policy(OccupancyMeasure(self.space, self.q_hat))

    def _refresh_estimates(self):
        if self.oracle is not None:
            self.conf, self.cost = self.oracle.conf, self.oracle.cost
        elif self.counters.N.sum() == 0:
            self.conf = TransitionConfidence.vacuous(self.space)
            self.cost = cost_bounds(self.counters, self.T, self.delta)
        else:
            self.conf = transition_confidence(self.counters, self.T, self.delta)
            self.cost = cost_bounds(self.counters, self.T, self.delta)

    @property
    def hat_policy(self):
        return self._hat_policy

    def omd_step(self, traj, losses, behaviour, alpha=None, u=None):
        """One OMD round: UOB under the previous confidence set, loss estimate,
        counter update, new confidence sets, multiplicative step, projection.

        ``alpha=None`` projects onto the occupancy space only.  Returns the
        projection result (``status`` tells whether the constrained program
        was feasible) and the upper occupancy bound used.  A precomputed
        ``u`` for ``behaviour`` under the previous confidence set may be passed.
        """
        s = self.space
        if u is None:
            u = upper_occupancy_bound(behaviour, self.conf)
        l_hat = loss_estimator(traj, losses, u, self.gamma, s)
        update_counters(self.counters, traj)
        self._refresh_estimates()
        q_tilde = omd_weight_update(self.q_hat, s.sa_to_triples(l_hat), self.eta)
        poly = OccupancyPolytope.from_confidence(self.conf)
        if alpha is None:
            res = kl_project_unconstrained(q_tilde, poly, self.warm)
            q_new = res.q
        else:
            res = kl_project(q_tilde, self.cost.g_hat, self.cost.xi, alpha, poly, self.warm)
            if res.feasible:
                q_new = res.q
            else:
                q_new = kl_project_unconstrained(q_tilde, poly).q
        if res.feasible:
            self.warm = tuple(res.active)
        self.q_hat = q_new.q.copy()
        self._hat_policy = induced_policy(q_new)
        self.t += 1
        return res, u

    # -- checkpointing -----------------------------------------------------
    def state_dict(self) -> dict:
        return {"t": self.t, "q_hat": self.q_hat.tolist(), "counters": self.counters.state_dict(),
                "warm": [list(k) for k in self.warm], "eta": self.eta, "gamma": self.gamma}

    def load_state_dict(self, d: dict):
        self.t = int(d["t"])
        self.q_hat = np.asarray(d["q_hat"], dtype=float)
        self.counters.load_state_dict(d["counters"])
        self.warm = tuple((k[0], int(k[1])) for k in d["warm"])
        self.eta, self.gamma = float(d["eta"]), float(d["gamma"])
        self._refresh_estimates()
        self._hat_policy = induced_policy(OccupancyMeasure(self.space, self.q_hat))


__all__ = ["loss_estimator", "default_rate", "Oracle", "OMDLearner", "SolverFailure"]
