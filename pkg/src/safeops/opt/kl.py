"""Multiplicative OMD update and KL (Bregman) projection onto the estimated
occupancy space intersected with optimistic cost constraints.

The projection ``argmin D(q || q_tilde)`` with the unnormalised KL

    D(q || q') = sum q ln(q / q') - sum (q - q')

is solved in three stages:

1. active-set dual Newton: with the active rows ``M`` treated as equalities the
   minimiser has the closed form ``q = q_tilde * exp(-M^T nu)`` and ``nu``
   minimises the smooth convex dual ``sum q(nu) + h^T nu``;
2. if that stalls, a primal-dual interior point method on the same problem;
3. if that also fails, a phase-1 LP decides between ``infeasible`` and a
   genuine :class:`SolverFailure`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..model import OccupancyMeasure
from .polytope import OccupancyPolytope
from .simplex import solve_lp_general

FLOOR = 1e-300
FEAS_TOL = 1e-10      # target for the reduced systems
ACCEPT_TOL = 1e-8     # acceptance on the full polytope
STALL_TOL = 1e-9
MAX_EXP = 700.0


class SolverFailure(RuntimeError):
    """The projection did not converge although the feasible set is nonempty."""


@dataclass
class ProjectionResult:
    status: str                       # "feasible" | "infeasible"
    q: OccupancyMeasure | None = None
    objective: float = float("nan")
    kkt_residual: float = float("nan")
    max_slack: float = float("nan")   # max constraint violation (<= 0 is satisfied)
    iterations: int = 0
    method: str = ""
    active: list = field(default_factory=list)
    zero_coords: list = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"


def omd_weight_update(q_hat, loss_est, eta: float) -> np.ndarray:
    """``q_tilde(x,a,x') = q_hat(x,a,x') exp(-eta loss_est(x,a))``."""
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    q = getattr(q_hat, "q", q_hat)
    space = getattr(q_hat, "space", None)
    loss_est = np.asarray(loss_est, dtype=float)
    if loss_est.ndim == 2:
        loss_est = space.sa_to_triples(loss_est)
    return q * np.exp(-eta * loss_est)


def kl_divergence(q, q_ref) -> float:
    q = np.asarray(getattr(q, "q", q), dtype=float)
    q_ref = np.maximum(np.asarray(getattr(q_ref, "q", q_ref), dtype=float), FLOOR)
    pos = q > 0
    return float(np.sum(q[pos] * np.log(q[pos] / q_ref[pos])) - np.sum(q - q_ref))


def cost_rows(space, G_hat, Xi=None) -> np.ndarray:
    """Optimistic cost matrix ``(G_hat - Xi)`` as rows over triples, ``(m, n)``."""
    G = np.asarray(G_hat, dtype=float)
    if G.ndim == 2:
        G = G[..., None]
    if Xi is not None:
        G = G - np.asarray(Xi, dtype=float)[..., None]
    return G[space.tx, space.ta].T


# ---------------------------------------------------------------------------
# stage 1: active-set dual Newton
# ---------------------------------------------------------------------------

def _primal(logz, M, nu):
    return np.exp(np.minimum(logz - M.T @ nu, MAX_EXP))


def _dual_newton(logz, M, h, nu, tol=FEAS_TOL, max_iter=60):
    """Minimise ``sum exp(logz - M^T nu) + h^T nu``.  Returns ``(nu, q, iters, ok)``."""
    q = _primal(logz, M, nu)
    phi = q.sum() + h @ nu
    for it in range(max_iter):
        g = M @ q - h
        if np.max(np.abs(g), initial=0.0) <= tol:
            return nu, q, it, True
        H = (M * q) @ M.T
        try:
            step = np.linalg.solve(H, g)
            if not np.all(np.isfinite(step)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        slope = g @ step
        if not np.isfinite(slope) or slope <= 0:
            step = g
            slope = g @ g
        s = 1.0
        while True:
            nu_new = nu + s * step
            q_new = _primal(logz, M, nu_new)
            phi_new = q_new.sum() + h @ nu_new
            if phi_new <= phi - 1e-4 * s * slope or s < 1e-10:
                break
            # near the optimum phi is flat to roundoff; fall back to the residual
            if (abs(phi_new - phi) <= 1e-14 * max(1.0, abs(phi))
                    and np.max(np.abs(M @ q_new - h)) < 0.5 * np.max(np.abs(g))):
                break
            s *= 0.5
        if s < 1e-10:
            # line search stalled on roundoff; accept if already close
            ok = np.max(np.abs(g), initial=0.0) <= STALL_TOL
            return nu, q, it, bool(ok)
        nu, q, phi = nu_new, q_new, phi_new
        if not np.isfinite(phi) or phi < -1e12:
            return nu, q, it, False
    g = M @ q - h
    return nu, q, max_iter, bool(np.max(np.abs(g), initial=0.0) <= tol)


def _active_set(logz, E, f, C, d, active, max_outer=None):
    """Add the most violated row or drop the most negative multiplier, one at a time."""
    active = sorted(set(active))
    mults = {}
    nu_eq = np.zeros(len(f))
    total = 0
    seen = set()
    scale = np.maximum(np.linalg.norm(C, axis=1), 1e-300) if C.shape[0] else np.zeros(0)
    for _ in range(max_outer or 4 * C.shape[0] + 10):
        M = np.vstack([E, C[active]]) if active else E
        h = np.concatenate([f, d[active]]) if active else f
        nu0 = np.concatenate([nu_eq, [max(mults.get(a, 0.0), 0.0) for a in active]])
        nu, q, its, ok = _dual_newton(logz, M, h, nu0)
        total += its
        key = tuple(active)
        if not ok or key in seen:
            return None, None, None, total
        seen.add(key)
        nu_eq = nu[:len(f)]
        mults = dict(zip(active, nu[len(f):]))
        if mults:
            worst = min(active, key=lambda a: mults[a])
            if mults[worst] < -1e-10:
                active.remove(worst)
                continue
        if C.shape[0]:
            viol = (C @ q - d) / scale
            viol[active] = -np.inf
            j = int(np.argmax(viol))
            if viol[j] > FEAS_TOL:
                active = sorted(active + [j])
                continue
        return q, nu_eq, mults, total
    return None, None, None, total


# ---------------------------------------------------------------------------
# stage 2: primal-dual interior point
# ---------------------------------------------------------------------------

def _interior_point(logz, E, f, C, d, max_iter=200):
    # overflow on a diverging run is caught by the finiteness check below
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        return _interior_point_run(logz, E, f, C, d, max_iter)


def _interior_point_run(logz, E, f, C, d, max_iter):
    n = logz.size
    me, mi = E.shape[0], C.shape[0]
    q = np.full(n, 1.0 / max(1, n))
    if me:
        # start from the least-norm point of the equalities, pushed inside
        q = np.maximum(np.linalg.lstsq(E, f, rcond=None)[0], 1e-2)
    s = np.maximum(d - C @ q, 1.0) if mi else np.zeros(0)
    z = np.ones(mi)
    y = np.zeros(me)
    lz = logz
    for it in range(max_iter):
        r_d = (np.log(q) - lz) + E.T @ y + C.T @ z
        r_p = E @ q - f
        r_c = C @ q + s - d
        mu = (s @ z) / mi if mi else 0.0
        big = q > 1e-9
        stat = np.max(np.abs(r_d[big]), initial=0.0)
        if (stat <= 1e-9 and np.max(np.abs(r_p), initial=0.0) <= FEAS_TOL
                and np.max(np.abs(r_c), initial=0.0) <= FEAS_TOL and mu <= 1e-12):
            return q, y, z, it, True
        Dg = z / s if mi else np.zeros(0)
        K = np.diag(1.0 / q) + (C.T * Dg) @ C
        KKT = np.block([[K, E.T], [E, np.zeros((me, me))]])
        if not np.all(np.isfinite(KKT)):
            return q, y, z, it, False

        def solve(r_sz):
            rhs1 = -r_d - C.T @ (Dg * r_c - r_sz / s) if mi else -r_d
            sol = np.linalg.lstsq(KKT, np.concatenate([rhs1, -r_p]), rcond=None)[0] \
                if not _nonsingular(KKT) else np.linalg.solve(KKT, np.concatenate([rhs1, -r_p]))
            dq, dy = sol[:n], sol[n:]
            dz = Dg * (C @ dq + r_c) - r_sz / s if mi else np.zeros(0)
            ds = -r_c - C @ dq if mi else np.zeros(0)
            return dq, dy, dz, ds

        def max_step(v, dv):
            neg = dv < 0
            return min(1.0, np.min(-v[neg] / dv[neg], initial=np.inf))

        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(z)) and np.all(s > 0)):
            # diverging, typically on an infeasible program; phase 1 decides
            return q, y, z, it, False
        try:
            dq, dy, dz, ds = solve(s * z)
        except np.linalg.LinAlgError:
            return q, y, z, it, False
        if mi:
            a_aff = min(max_step(q, dq), max_step(s, ds), max_step(z, dz))
            mu_aff = ((s + a_aff * ds) @ (z + a_aff * dz)) / mi
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            try:
                dq, dy, dz, ds = solve(s * z - sigma * mu + ds * dz)
            except np.linalg.LinAlgError:
                return q, y, z, it, False
        a = 0.99 * min(max_step(q, dq), max_step(s, ds) if mi else 1.0,
                       max_step(z, dz) if mi else 1.0)
        a = min(a, 1.0)
        q = q + a * dq
        y = y + a * dy
        if mi:
            s, z = s + a * ds, z + a * dz
        q = np.maximum(q, 1e-300)
    return q, y, z, max_iter, False


def _nonsingular(K):
    return np.linalg.cond(K) < 1e12


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def kl_project(q_tilde, G_hat, Xi, alpha, polytope: OccupancyPolytope,
               warm_active=None) -> ProjectionResult:
    """``argmin D(q || q_tilde)`` over the polytope with ``(G_hat - Xi)^T q <= alpha``.

    ``G_hat`` may be ``None`` for the unconstrained projection.  ``warm_active``
    is a collection of row keys (from a previous result's ``active``).
    """
    s = polytope.space
    qt = np.maximum(np.asarray(getattr(q_tilde, "q", q_tilde), dtype=float), FLOOR)
    red = polytope.reduced
    free = red.free
    logz = np.log(qt[free])
    # the all-ones vector lies in the row space of the equalities, so rescaling
    # q_tilde leaves the projection unchanged; start from total mass L
    if logz.size:
        logz = logz - np.log(qt[free].sum() / s.L)
    C, d, keys = red.C, red.d, list(red.keys)
    if G_hat is not None:
        Gr = cost_rows(s, G_hat, Xi)
        alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        C = np.vstack([C, Gr[:, free]])
        d = np.concatenate([d, alpha])
        keys += [("cost", i) for i in range(Gr.shape[0])]
    else:
        Gr = np.zeros((0, s.n_triples))
        alpha = np.zeros(0)

    def finish(qf, method, iters, active, mults, nu_eq=None):
        q = np.zeros(s.n_triples)
        q[free] = qf
        viol = max(polytope.max_violation(q),
                   float(np.max(Gr @ q - alpha, initial=-np.inf)) if Gr.shape[0] else 0.0)
        cost_slack = float(np.max(Gr @ q - alpha)) if Gr.shape[0] else -np.inf
        if viol > ACCEPT_TOL:
            return None
        # stationarity on the free coordinates with positive mass
        big = qf > 1e-12
        kkt = 0.0
        if nu_eq is not None:
            grad = np.log(np.maximum(qf, FLOOR)) - logz + red.E.T @ nu_eq
            if active:
                grad = grad + C[active].T @ np.array([mults[a] for a in active])
            kkt = float(np.max(np.abs(grad[big]), initial=0.0))
            comp = max((abs(mults[a] * (C[a] @ qf - d[a])) for a in active), default=0.0)
            neg = max((-mults[a] for a in active), default=0.0)
            kkt = max(kkt, comp, neg, viol if viol > 0 else 0.0)
        zeros = [int(j) for j in np.flatnonzero(polytope.fixed_zero)] + \
                [int(j) for j in np.flatnonzero(free)[~big]]
        return ProjectionResult("feasible", OccupancyMeasure(s, q), kl_divergence(q, qt), kkt,
                                max(viol, cost_slack), iters, method,
                                [keys[a] for a in active], sorted(zeros))

    if red.feasible:
        key_pos = {k: i for i, k in enumerate(keys)}
        act0 = [key_pos[k] for k in (warm_active or ()) if k in key_pos]
        q, nu_eq, mults, its = _active_set(logz, red.E, red.f, C, d, act0)
        if q is not None:
            res = finish(q, "dual-newton", its, sorted(mults), mults, nu_eq)
            if res is not None:
                return res
        q, y, z, its2, ok = _interior_point(logz, red.E, red.f, C, d)
        if ok:
            active = [int(i) for i in np.flatnonzero(z > 1e-8)] if C.shape[0] else []
            mults = {i: float(z[i]) for i in range(C.shape[0])}
            res = finish(q, "interior-point", its + its2, active, mults, y)
            if res is not None:
                return res

    # stage 3: decide feasibility with a phase-1 LP on the full linear system
    A_eq, b_eq = polytope.equalities()
    Cp, dp = polytope.inequalities()
    A_ub = np.vstack([Cp, Gr])
    b_ub = np.concatenate([dp, alpha])
    lp = solve_lp_general(np.zeros(s.n_triples), A_ub, b_ub, A_eq, b_eq,
                          ub=np.where(polytope.fixed_zero, 0.0, 1.0))
    if lp.status == "infeasible":
        return ProjectionResult("infeasible", method="phase-1", max_slack=lp.phase1_residual)
    raise SolverFailure("KL projection did not converge on a feasible problem")


def kl_project_unconstrained(q_tilde, polytope: OccupancyPolytope, warm_active=None) -> ProjectionResult:
    res = kl_project(q_tilde, None, None, None, polytope, warm_active)
    if not res.feasible:
        raise SolverFailure("occupancy polytope is empty")
    return res
