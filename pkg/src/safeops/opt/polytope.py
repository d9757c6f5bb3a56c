"""Linear description of the estimated occupancy space.

Rows (all over the flat triple vector):

* normalisation of every layer (the first layer's row plus the flow rows imply
  the rest, so :attr:`OccupancyPolytope.reduced` keeps only the first),
* flow conservation at every internal state,
* brackets ``lo * sum_y q(x,a,y) <= q(x,a,x') <= hi * sum_y q(x,a,y)``,
* ``q >= 0``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from ..estimation import TransitionConfidence
from ..model import LayeredStateSpace, TransitionKernel

EQ_WIDTH = 1e-15


@dataclass(frozen=True, eq=False)
class OccupancyPolytope:
    space: LayeredStateSpace
    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def from_confidence(cls, conf: TransitionConfidence):
        return cls(conf.space, conf.lower, conf.upper)

    @classmethod
    def from_kernel(cls, kernel: TransitionKernel):
        """The true occupancy space (zero-width intervals)."""
        return cls(kernel.space, kernel.p.copy(), kernel.p.copy())

    @property
    def n(self) -> int:
        return self.space.n_triples

    # -- full systems ------------------------------------------------------
    @property
    def normalization_rows(self):
        return _structure(self.space)[0]

    @property
    def flow_rows(self):
        return _structure(self.space)[1]

    @cached_property
    def bracket_rows(self):
        """``(A_ub, kinds, idx)`` with every row ``<= 0``; kinds 'hi' / 'lo'."""
        B = self.space.block_matrix
        eye = np.eye(self.n)
        up = eye - self.upper[:, None] * B
        low = self.lower[:, None] * B - eye
        return np.vstack([up, low]), np.array(["hi"] * self.n + ["lo"] * self.n), \
            np.concatenate([np.arange(self.n)] * 2)

    def equalities(self):
        A1, b1 = self.normalization_rows
        A2, b2 = self.flow_rows
        return np.vstack([A1, A2]), np.concatenate([b1, b2])

    def inequalities(self):
        A, _, _ = self.bracket_rows
        return A, np.zeros(A.shape[0])

    def max_violation(self, q) -> float:
        """Largest violation of any row (0 when ``q`` is inside)."""
        s = self.space
        q = np.asarray(getattr(q, "q", q), dtype=float)
        layer_mass = np.bincount(s.triple_layer, q, minlength=s.L)
        out = np.bincount(s.tx, q, minlength=s.n_states)
        inn = np.bincount(s.ty, q, minlength=s.n_states)
        internal = slice(s.layer_start[1], s.layer_start[s.L])
        q_sa = np.bincount(s.block_id, q, minlength=s.n_states * s.n_actions)[s.block_id]
        return float(max(np.max(np.abs(layer_mass - 1.0)),
                         np.max(np.abs(out[internal] - inn[internal]), initial=0.0),
                         np.max(q - self.upper * q_sa), np.max(self.lower * q_sa - q),
                         np.max(-q), 0.0))

    def contains(self, q, tol: float = 1e-8) -> bool:
        return self.max_violation(q) <= tol

    # -- reduced system used by the solvers --------------------------------
    @cached_property
    def fixed_zero(self) -> np.ndarray:
        """Triples forced to zero: ``hi = 0`` (or ``hi < 1`` on a block with a
        single successor) and everything out of a state whose inflow is
        entirely forced to zero."""
        s = self.space
        fixed = (self.upper <= 0.0) | ((s.successors_per_triple == 1) & (self.upper < 1.0))
        if not fixed.any():
            return fixed
        for k in range(1, s.L):
            inl = slice(s.triple_start[k - 1], s.triple_start[k])
            for x in s.layer_states(k):
                incoming = s.ty[inl] == x
                if np.all(fixed[inl][incoming]):
                    fixed[s.tx == x] = True
        return fixed

    @cached_property
    def reduced(self) -> "ReducedSystem":
        s = self.space
        fixed = self.fixed_zero
        free = ~fixed
        lo, hi = self.lower, self.upper
        B = s.block_matrix
        single = s.successors_per_triple == 1
        (A1, b1), (A2, b2) = _structure(s)

        def bracket(mask, coef, sign):
            idx = np.flatnonzero(mask)
            rows = -sign * coef[idx, None] * B[idx]
            rows[np.arange(idx.size), idx] += sign
            return rows

        is_eq = (hi - lo <= EQ_WIDTH) & free & ~single
        eq_rows, eq_rhs = [A1[:1], A2], [b1[:1], b2]
        if is_eq.any():
            eq_rows.append(bracket(is_eq, hi, 1.0))
            eq_rhs.append(np.zeros(int(is_eq.sum())))
        up_keep = (hi < 1.0) & ~is_eq & free & ~single
        lo_keep = (lo > 0.0) & ~is_eq & free & ~single
        ineq = np.vstack([bracket(up_keep, hi, 1.0), bracket(lo_keep, lo, -1.0)])
        keys = [("hi", int(j)) for j in np.flatnonzero(up_keep)] + \
               [("lo", int(j)) for j in np.flatnonzero(lo_keep)]

        E = np.vstack(eq_rows)[:, free]
        f = np.concatenate(eq_rhs)
        C = ineq[:, free]
        if fixed.any() or is_eq.any():
            nz = np.any(np.abs(E) > 0, axis=1)
            if np.any(np.abs(f[~nz]) > 0):
                return ReducedSystem(free, E, f, C, np.zeros(C.shape[0]), keys, feasible=False)
            E, f = _independent_rows(E[nz], f[nz])
            keep = np.any(np.abs(C) > 0, axis=1)
            keys = [k for k, flag in zip(keys, keep) if flag]
            C = C[keep]
        # otherwise the first-layer row and the flow rows are independent by construction
        return ReducedSystem(free, E, f, C, np.zeros(C.shape[0]), keys)


@lru_cache(maxsize=64)
def _structure(space: LayeredStateSpace):
    """Normalisation and flow rows, which depend on the graph only."""
    s = space
    A1 = (s.triple_layer[None, :] == np.arange(s.L)[:, None]).astype(float)
    xs = np.arange(s.layer_start[1], s.layer_start[s.L])
    A2 = (s.tx[None, :] == xs[:, None]).astype(float) - (s.ty[None, :] == xs[:, None])
    for a in (A1, A2):
        a.setflags(write=False)
    return (A1, np.ones(s.L)), (A2, np.zeros(len(xs)))


@dataclass(frozen=True, eq=False)
class ReducedSystem:
    """Equalities ``E q_free = f`` and inequalities ``C q_free <= d`` on the
    non-fixed coordinates ``free``."""
    free: np.ndarray
    E: np.ndarray
    f: np.ndarray
    C: np.ndarray
    d: np.ndarray
    keys: list
    feasible: bool = True


def _independent_rows(E, f, tol=1e-10):
    """Drop linearly dependent rows (QR with column pivoting on ``E^T``)."""
    if E.shape[0] == 0:
        return E, f
    from scipy.linalg import qr
    _, R, piv = qr(E.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > tol * max(1.0, diag[0])))
    if rank == E.shape[0]:
        return E, f
    keep = np.sort(piv[:rank])
    return E[keep], f[keep]
