"""CV-OPS: estimate a strictly feasible policy with a primal-dual scheme, then
hand over to S-OPS."""
from __future__ import annotations

import math

import numpy as np

from ..model import LayeredStateSpace, MixturePolicy, Policy
from ..opt.kl import SolverFailure
from ..opt.ogd import simplex_ogd_step
from .core import OMDLearner, Oracle
from .svops import SOPS


class DegenerateEstimate(RuntimeError):
    """The estimated Slater parameter is not positive."""


def epoch_of(t: int) -> int:
    """Doubling epoch of episode ``t`` (epochs start at 1, 2, 4, 8, ...)."""
    return int(t).bit_length() - 1


def epoch_rate(space: LayeredStateSpace, j: int, delta: float) -> float:
    XA = space.n_states * space.n_actions
    return math.sqrt(space.L * math.log(space.L * XA / delta) / (2 ** j * XA))


class AnytimePrimal:
    """Unconstrained bandit OMD restarted on a doubling schedule.

    Fed losses in ``[-alpha_max / L, 1]`` are mapped affinely to ``[0, 1]``
    before estimation; ``scale`` converts regret back to original units.
    """

    def __init__(self, space: LayeredStateSpace, m: int, T: int, delta: float, alpha_max: float,
                 oracle: Oracle | None = None):
        self.space = space
        self.offset = alpha_max / space.L
        self.scale = 1.0 + self.offset
        self.omd = OMDLearner(space, m, T, delta, oracle=oracle)
        self.delta = delta
        self.t = 0
        self.epoch = -1
        self._start_epoch(0)

    def _start_epoch(self, j: int):
        self.epoch = j
        rate = epoch_rate(self.space, j, self.delta)
        o = self.omd
        o.eta = o.gamma = rate
        o.reset_iterate()

    def rescale(self, losses) -> np.ndarray:
        return (np.asarray(losses, dtype=float) + self.offset) / self.scale

    @property
    def policy(self) -> Policy:
        return self.omd.hat_policy

    def step(self, traj, fed_losses):
        res, _ = self.omd.omd_step(traj, self.rescale(fed_losses), self.policy)
        self.t += 1
        if epoch_of(self.t + 1) != self.epoch:
            self._start_epoch(epoch_of(self.t + 1))
        return res

    def state_dict(self) -> dict:
        return {"omd": self.omd.state_dict(), "t": self.t, "epoch": self.epoch}

    def load_state_dict(self, d: dict):
        self.omd.load_state_dict(d["omd"])
        self.t, self.epoch = int(d["t"]), int(d["epoch"])


def stopping_threshold(t: int, cp: float, cd: float, L: int, delta: float) -> float:
    lnt = math.log(t) if t > 1 else 0.0
    return (2 * cp * math.sqrt(t * lnt) + 8 * L * math.sqrt(2 * t * math.log(1 / delta))
            + 2 * cd * math.sqrt(t))


def cvops_stopping_condition(S, t: int, cp: float, cd: float, L: int, delta: float) -> bool:
    """``-max_i S_i(t) >= 2 C_P sqrt(t ln t) + 8 L sqrt(2 t ln(1/delta)) + 2 C_D sqrt(t)``."""
    return bool(-np.max(S) >= stopping_threshold(t, cp, cd, L, delta))


def estimate_slater(R, t: int, L: int, delta: float) -> float:
    """``rho_hat = -max_i R_i / t - (2L / t) sqrt(2 t ln(1/delta))``."""
    return float(-np.max(R) / t - 2 * L / t * math.sqrt(2 * t * math.log(1 / delta)))


def build_mixture_policy(policies) -> MixturePolicy:
    if len(policies) < 1:
        raise ValueError("need at least one played policy")
    return MixturePolicy.uniform(list(policies))


def default_constants(space: LayeredStateSpace, m: int, T: int, delta: float):
    XA = space.n_states * space.n_actions
    cp = 10 * space.L * space.n_states * math.sqrt(space.n_actions * math.log(T * XA / delta))
    cd = space.L * math.sqrt(2 * m)
    return cp, cd


class CVOPS:
    name = "cvops"

    def __init__(self, space: LayeredStateSpace, alpha, T: int, delta: float,
                 cp: float | None = None, cd: float | None = None, cdelta: float = 10.0,
                 eta: float | None = None, gamma: float | None = None,
                 oracle: Oracle | None = None, full_sums: bool = True):
        self.space, self.T, self.delta = space, T, delta
        self.alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        self.m = self.alpha.size
        self.L = space.L
        d_cp, d_cd = default_constants(space, self.m, T, delta)
        self.cp = d_cp if cp is None else float(cp)
        self.cd = d_cd if cd is None else float(cd)
        self.cdelta = cdelta
        self.eta, self.gamma, self.oracle = eta, gamma, oracle
        # steps entering the violation sums; the literal variant skips k = 0
        self.steps = np.arange(self.L) if full_sums else np.arange(1, self.L)
        self.primal = AnytimePrimal(space, self.m, T, delta, float(self.alpha.max()), oracle)
        self.phi = np.full(self.m, 1.0 / self.m)
        self.S = np.zeros(self.m)
        self.R = np.zeros(self.m)
        self.t = 0
        self.phase = "estimating"
        self.played = []
        self.t_bar = None
        self.rho_hat = None
        self.pi_diamond_hat = None
        self.nested = None

    @property
    def policy(self):
        return self.primal.policy if self.phase == "estimating" else self.nested.policy

    def step(self, traj) -> dict:
        if self.phase == "running":
            d = self.nested.step(traj)
            self.t += 1
            return d
        self.t += 1
        self.played.append(self.primal.policy)
        g = np.asarray(traj.costs, dtype=float)[self.steps]
        dev = g - self.alpha / self.L
        fed = np.zeros(self.L)
        fed[self.steps] = dev @ self.phi
        try:
            res = self.primal.step(traj, fed)
        except SolverFailure as e:
            raise SolverFailure(f"episode {self.t}: {e}") from e
        self.phi = simplex_ogd_step(self.phi, -dev.sum(axis=0), self.t, self.L, self.alpha)
        self.S += dev.sum(axis=0)
        self.R += g.sum(axis=0) - self.alpha
        if cvops_stopping_condition(self.S, self.t, self.cp, self.cd, self.L, self.delta):
            self._transition()
        return {"proj_feasible": res.feasible, "lam": float("nan"), "phase": "estimating"}

    def _transition(self):
        rho_hat = estimate_slater(self.R, self.t, self.L, self.delta)
        self.t_bar, self.rho_hat = self.t, rho_hat
        if rho_hat <= 0:
            raise DegenerateEstimate(f"estimated Slater parameter {rho_hat:.6g} <= 0 at t={self.t}")
        self.pi_diamond_hat = build_mixture_policy(self.played)
        self.nested = SOPS(self.space, self.alpha, self.T, self.delta, self.pi_diamond_hat,
                           self.alpha - rho_hat, self.eta, self.gamma, self.oracle)
        self.phase = "running"

    def state_dict(self) -> dict:
        d = {"t": self.t, "phase": self.phase, "phi": self.phi.tolist(), "S": self.S.tolist(),
             "R": self.R.tolist(), "played": [p.pi.tolist() for p in self.played],
             "primal": self.primal.state_dict(), "t_bar": self.t_bar, "rho_hat": self.rho_hat}
        if self.nested is not None:
            d["nested"] = self.nested.state_dict()
        return d

    def load_state_dict(self, d: dict):
        self.t, self.phase = int(d["t"]), d["phase"]
        self.phi = np.asarray(d["phi"], dtype=float)
        self.S = np.asarray(d["S"], dtype=float)
        self.R = np.asarray(d["R"], dtype=float)
        self.played = [Policy(self.space, np.asarray(p)) for p in d["played"]]
        self.primal.load_state_dict(d["primal"])
        self.t_bar, self.rho_hat = d["t_bar"], d["rho_hat"]
        if self.phase == "running":
            self.pi_diamond_hat = build_mixture_policy(self.played)
            self.nested = SOPS(self.space, self.alpha, self.T, self.delta, self.pi_diamond_hat,
                               self.alpha - self.rho_hat, self.eta, self.gamma, self.oracle)
            self.nested.load_state_dict(d["nested"])


def cvops_step(state: CVOPS, traj):
    diag = state.step(traj)
    return state, state.policy, diag
