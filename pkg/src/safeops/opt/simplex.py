"""Dense bounded-variable revised simplex.

Solves ``min c^T x  s.t.  A x = b,  lb <= x <= ub`` with finite ``lb`` and
possibly infinite ``ub``.  Phase 1 minimises the sum of artificials started
from every structural variable at its lower bound.  Pricing is Dantzig's rule
with a switch to Bland's rule after a run of degenerate pivots.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

FEAS_TOL = 1e-9
PIV_TOL = 1e-11
DJ_TOL = 1e-10


@dataclass
class LPResult:
    status: str                    # "optimal" | "infeasible" | "unbounded" | "iteration_limit"
    x: np.ndarray | None = None
    value: float = float("nan")
    y: np.ndarray | None = None    # equality duals
    d: np.ndarray | None = None    # reduced costs
    gap: float = float("nan")      # primal minus dual objective
    phase1_residual: float = 0.0
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


class _Tableau:
    def __init__(self, A, b, c, lb, ub, basis, at_upper, max_iter):
        self.A, self.b, self.c, self.lb, self.ub = A, b, c, lb, ub
        self.basis = list(basis)
        self.at_upper = at_upper          # nonbasic status
        self.max_iter = max_iter
        self.iterations = 0
        self._refactor()

    def _refactor(self):
        self.lu = sla.lu_factor(self.A[:, self.basis])

    def x(self):
        self.A.shape[1]
        x = np.where(self.at_upper, self.ub, self.lb).astype(float)
        x[self.basis] = 0.0
        rhs = self.b - self.A @ x
        x[self.basis] = sla.lu_solve(self.lu, rhs)
        return x

    def duals(self):
        y = sla.lu_solve(self.lu, self.c[self.basis], trans=1)
        return y, self.c - self.A.T @ y

    def run(self):
        m, n = self.A.shape
        is_basic = np.zeros(n, dtype=bool)
        is_basic[self.basis] = True
        movable = self.ub - self.lb > 0
        degenerate_run, bland = 0, False
        while self.iterations < self.max_iter:
            x = self.x()
            y, d = self.duals()
            cand_up = ~is_basic & ~self.at_upper & movable & (d < -DJ_TOL)
            cand_dn = ~is_basic & self.at_upper & movable & (d > DJ_TOL)
            cand = np.flatnonzero(cand_up | cand_dn)
            if cand.size == 0:
                return "optimal"
            j = int(cand[0]) if bland else int(cand[np.argmax(np.abs(d[cand]))])
            s = 1.0 if cand_up[j] else -1.0
            w = sla.lu_solve(self.lu, self.A[:, j]) * s
            xb = x[self.basis]
            lbb, ubb = self.lb[self.basis], self.ub[self.basis]
            theta = np.full(m, np.inf)
            dec, inc = w > PIV_TOL, w < -PIV_TOL
            theta[dec] = (xb[dec] - lbb[dec]) / w[dec]
            theta[inc] = (ubb[inc] - xb[inc]) / -w[inc]
            theta = np.maximum(theta, 0.0)
            flip = self.ub[j] - self.lb[j]
            r = int(np.argmin(theta)) if m else -1
            if bland and m:
                tmin = theta.min()
                ties = np.flatnonzero(theta <= tmin + 1e-12)
                r = int(ties[np.argmin(np.asarray(self.basis)[ties])])
            step = theta[r] if m else np.inf
            if flip <= step:
                if not np.isfinite(flip):
                    return "unbounded"
                self.at_upper[j] = not self.at_upper[j]
                step = flip
            else:
                leave = self.basis[r]
                self.at_upper[leave] = bool(inc[r])
                self.basis[r] = j
                is_basic[leave], is_basic[j] = False, True
                self.at_upper[j] = False
                self._refactor()
            self.iterations += 1
            degenerate_run = degenerate_run + 1 if step <= 1e-12 else 0
            bland = bland or degenerate_run > 50
        return "iteration_limit"


def solve_lp(c, A_eq, b_eq, lb=None, ub=None, max_iter: int = 10000) -> LPResult:
    c = np.asarray(c, dtype=float)
    A = np.atleast_2d(np.asarray(A_eq, dtype=float)).reshape(-1, c.size)
    b = np.asarray(b_eq, dtype=float).reshape(-1)
    m, n = A.shape
    lb = np.zeros(n) if lb is None else np.asarray(lb, dtype=float)
    ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float)
    if np.any(~np.isfinite(lb)):
        raise ValueError("lower bounds must be finite")
    if np.any(ub < lb - FEAS_TOL):
        return LPResult("infeasible", phase1_residual=float(np.max(lb - ub)))

    # phase 1: artificials absorb the residual of x = lb
    r = b - A @ lb
    sign = np.where(r >= 0, 1.0, -1.0)
    A1 = np.hstack([A, np.diag(sign)])
    c1 = np.concatenate([np.zeros(n), np.ones(m)])
    lb1 = np.concatenate([lb, np.zeros(m)])
    ub1 = np.concatenate([ub, np.full(m, np.inf)])
    tab = _Tableau(A1, b, c1, lb1, ub1, range(n, n + m), np.zeros(n + m, dtype=bool), max_iter)
    st = tab.run()
    if st == "iteration_limit":
        return LPResult(st, iterations=tab.iterations)
    x1 = tab.x()
    resid = float(x1[n:].sum())
    if resid > 1e-8:
        return LPResult("infeasible", phase1_residual=resid, iterations=tab.iterations)

    # drive artificials out of the basis, dropping redundant rows
    keep_rows = np.ones(m, dtype=bool)
    basis = list(tab.basis)
    at_upper = tab.at_upper.copy()
    for r_i in range(m):
        if basis[r_i] < n:
            continue
        B = A1[:, basis]
        row = np.linalg.solve(B.T, np.eye(m)[r_i])
        alpha = row @ A
        nb = np.ones(n, dtype=bool)
        nb[[k for k in basis if k < n]] = False
        cands = np.flatnonzero(nb & (np.abs(alpha) > 1e-9))
        if cands.size:
            j = int(cands[np.argmax(np.abs(alpha[cands]))])
            basis[r_i] = j
            at_upper[j] = False
        else:
            # the artificial basic here belongs to row basis[r_i] - n, which
            # is a combination of the others
            keep_rows[basis[r_i] - n] = False
    rows = np.flatnonzero(keep_rows)
    A2, b2 = A[rows], b[rows]
    basis2 = [j for j in basis if j < n]
    # nonbasic variables keep their phase-1 bound
    tab2 = _Tableau(A2, b2, c, lb, ub, basis2, at_upper[:n].copy(), max_iter)
    if len(basis2):
        x_chk = tab2.x()
        if np.any(x_chk < lb - 1e-7) or np.any(x_chk > ub + 1e-7):
            # degenerate swap produced a slightly infeasible basis; restart cleanly
            return LPResult("iteration_limit", iterations=tab.iterations)
    st = tab2.run()
    its = tab.iterations + tab2.iterations
    if st != "optimal":
        return LPResult(st, iterations=its)
    x = tab2.x()
    x = np.clip(x, lb, ub)
    y_red, d = tab2.duals()
    y = np.zeros(m)
    y[rows] = y_red
    value = float(c @ x)
    dual_obj = float(b2 @ y_red + np.sum(np.where(d > 0, d * lb, 0.0))
                     + np.sum(np.where(d < 0, d * np.where(np.isfinite(ub), ub, 0.0), 0.0)))
    return LPResult("optimal", x, value, y, d, value - dual_obj, resid, its)


def solve_lp_general(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, lb=None, ub=None,
                     max_iter: int = 10000) -> LPResult:
    """``min c^T x`` with ``A_ub x <= b_ub``, ``A_eq x = b_eq`` and bounds.

    Inequalities get slack columns; the returned ``x`` excludes them and ``y``
    lists the equality duals followed by the inequality duals (``<= 0``).
    """
    c = np.asarray(c, dtype=float)
    n = c.size
    A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, dtype=float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).reshape(-1)
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).reshape(-1)
    k = A_ub.shape[0]
    A = np.block([[A_eq, np.zeros((A_eq.shape[0], k))], [A_ub, np.eye(k)]])
    b = np.concatenate([b_eq, b_ub])
    cc = np.concatenate([c, np.zeros(k)])
    lb = np.zeros(n) if lb is None else np.asarray(lb, dtype=float)
    ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float)
    res = solve_lp(cc, A, b, np.concatenate([lb, np.zeros(k)]),
                   np.concatenate([ub, np.full(k, np.inf)]), max_iter)
    if res.x is not None:
        res.x = res.x[:n]
        res.d = res.d[:n]
    return res
