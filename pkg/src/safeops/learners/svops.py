"""SV-OPS: optimistic policy search with sublinear violation, and S-OPS, its
safe variant that mixes in a known strictly feasible policy."""
from __future__ import annotations

import numpy as np

from ..estimation import upper_occupancy_bound, upper_reach
from ..model import LayeredStateSpace, MixturePolicy, Policy
from ..opt.kl import SolverFailure
from .core import OMDLearner, Oracle


class SVOPS:
    name = "svops"

    def __init__(self, space: LayeredStateSpace, alpha, T: int, delta: float,
                 eta: float | None = None, gamma: float | None = None, oracle: Oracle | None = None):
        self.alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        self.omd = OMDLearner(space, self.alpha.size, T, delta, eta, gamma, oracle, self.alpha)
        self.space = space

    @property
    def policy(self):
        return self.omd.hat_policy

    def step(self, traj) -> dict:
        """Consume the feedback of the current policy and move to the next one."""
        try:
            res, _ = self.omd.omd_step(traj, traj.losses, self.policy, self.alpha)
        except SolverFailure as e:
            raise SolverFailure(f"episode {self.omd.t + 1}: {e}") from e
        return {"proj_feasible": res.feasible, "lam": 0.0, "phase": "running"}

    def state_dict(self) -> dict:
        return {"omd": self.omd.state_dict()}

    def load_state_dict(self, d: dict):
        self.omd.load_state_dict(d["omd"])


def svops_step(state: SVOPS, traj):
    diag = state.step(traj)
    return state, state.policy, diag


def initial_mixing(alpha, beta, L: int) -> float:
    """``lambda_0 = max_i (L - alpha_i) / (L - beta_i)``."""
    alpha, beta = np.atleast_1d(alpha).astype(float), np.atleast_1d(beta).astype(float)
    _check_beta(alpha, beta)
    return float(np.max((L - alpha) / (L - beta)))


def _check_beta(alpha, beta):
    if np.any(beta >= alpha):
        raise ValueError("need beta_i < alpha_i for every constraint")


def sops_mixing_probability(G_hat, Xi, u_hat, alpha, beta, L: int) -> float:
    """Pessimistic probability of playing the strictly feasible policy.

    With ``c_i = min{(g_hat_i + xi)^T u_hat, L}``: 0 if every ``c_i <= alpha_i``,
    otherwise ``max_i (c_i - alpha_i) / (c_i - beta_i)`` over the violated
    constraints.
    """
    alpha, beta = np.atleast_1d(alpha).astype(float), np.atleast_1d(beta).astype(float)
    _check_beta(alpha, beta)
    G = np.asarray(G_hat, dtype=float)
    if G.ndim == 2:
        G = G[..., None]
    raw = np.einsum("xai,xa->i", G + np.asarray(Xi, dtype=float)[..., None], u_hat)
    return mixing_from_costs(raw, alpha, beta, L)


def mixing_from_costs(raw, alpha, beta, L: int) -> float:
    raw = np.asarray(raw, dtype=float)
    viol = raw > alpha
    if not viol.any():
        return 0.0
    c = np.minimum(raw, L)
    return float(np.max((c[viol] - alpha[viol]) / (c[viol] - beta[viol])))


class SOPS:
    name = "sops"

    def __init__(self, space: LayeredStateSpace, alpha, T: int, delta: float, pi_diamond, beta,
                 eta: float | None = None, gamma: float | None = None, oracle: Oracle | None = None):
        self.alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        self.beta = np.broadcast_to(np.asarray(beta, dtype=float), self.alpha.shape).copy()
        _check_beta(self.alpha, self.beta)
        self.space = space
        self.L = space.L
        self.pi_diamond = pi_diamond
        self.omd = OMDLearner(space, self.alpha.size, T, delta, eta, gamma, oracle, self.alpha)
        self.lam0 = initial_mixing(self.alpha, self.beta, self.L)
        self.lam = self.lam0
        self._policy = self._mix()
        self._bounds()

    def _mix(self):
        return MixturePolicy((self.pi_diamond, self.omd.hat_policy), np.array([self.lam, 1.0 - self.lam]))

    @property
    def policy(self):
        return self._policy

    def _bounds(self):
        """Upper occupancy bounds of both mixture components under the current
        confidence set; the next episode's loss estimator reuses them."""
        conf = self.omd.conf
        if isinstance(self.pi_diamond, Policy):
            pis = np.stack([self.pi_diamond.pi, self.omd.hat_policy.pi])
            reach = upper_reach(pis, conf)
            u = reach[:, :, None] * pis
            u[:, -1] = 0.0
            self.u_diamond, self.u_hat = np.clip(u[0], 0, 1), np.clip(u[1], 0, 1)
        else:
            self.u_diamond = upper_occupancy_bound(self.pi_diamond, conf)
            self.u_hat = upper_occupancy_bound(self.omd.hat_policy, conf)

    def step(self, traj) -> dict:
        u = self.lam * self.u_diamond + (1.0 - self.lam) * self.u_hat
        try:
            res, _ = self.omd.omd_step(traj, traj.losses, self._policy, self.alpha, u=u)
        except SolverFailure as e:
            raise SolverFailure(f"episode {self.omd.t + 1}: {e}") from e
        self._bounds()
        pess_ok = True
        if res.feasible:
            u_hat = self.u_hat
            cost = self.omd.cost
            raw = np.einsum("xai,xa->i", cost.pessimistic, u_hat)
            self.lam = mixing_from_costs(raw, self.alpha, self.beta, self.L)
            c = np.minimum(raw, self.L)
            pess_ok = bool(np.all(self.lam * self.beta + (1 - self.lam) * c <= self.alpha + 1e-9))
        else:
            self.lam = 1.0
        self._policy = self._mix()
        return {"proj_feasible": res.feasible, "lam": self.lam, "phase": "running",
                "pessimism_ok": pess_ok}

    def state_dict(self) -> dict:
        return {"omd": self.omd.state_dict(), "lam": self.lam}

    def load_state_dict(self, d: dict):
        self.omd.load_state_dict(d["omd"])
        self.lam = float(d["lam"])
        self._policy = self._mix()
        self._bounds()


def sops_step(state: SOPS, traj):
    diag = state.step(traj)
    return state, state.policy, diag
