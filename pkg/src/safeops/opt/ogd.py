"""Online gradient descent on the probability simplex."""
from __future__ import annotations

import math

import numpy as np


def project_to_simplex(v) -> np.ndarray:
    """Euclidean projection onto ``{p >= 0, sum p = 1}`` (sort-based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - css / k > 0)[-1]
    tau = css[rho] / (rho + 1)
    return np.maximum(v - tau, 0.0)


def dual_step_size(t: int, L: int, alpha) -> float:
    g_max = L * (1.0 + float(np.max(alpha)) / L)
    return math.sqrt(2.0) / (g_max * math.sqrt(t))


def simplex_ogd_step(phi, grad, t: int | None = None, L: int | None = None, alpha=None,
                     eta: float | None = None) -> np.ndarray:
    """One projected gradient step; ``eta`` defaults to ``sqrt(2) / (G_max sqrt(t))``."""
    if eta is None:
        eta = dual_step_size(t, L, alpha)
    return project_to_simplex(np.asarray(phi, dtype=float) - eta * np.asarray(grad, dtype=float))
