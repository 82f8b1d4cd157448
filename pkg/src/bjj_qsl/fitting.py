"""Least-squares fit of the geodesic Rabi law eps(T) = cos^2(J T)."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.optimize import minimize_scalar

POOR_FIT_R2 = 0.9


class RabiFit(NamedTuple):
    J: float
    r2: float
    poor: bool


def _sse(J, T, y):
    r = np.cos(J * T) ** 2 - y
    return float(np.dot(r, r))


def fit_rabi(eps, Ts, n_scan: int = 2000) -> RabiFit:
    """Fit cos^2(J T) to (T, eps) samples.

    A dense scan brackets the global minimum; bounded Brent (golden section
    with parabolic steps) refines it.  R^2 below 0.9 sets ``poor``.
    """
    y = np.asarray(eps, dtype=float)
    T = np.asarray(Ts, dtype=float)
    if y.shape != T.shape or y.size < 5:
        raise ValueError("need at least 5 matching (T, eps) samples")
    order = np.argsort(T)
    T, y = T[order], y[order]
    spacing = np.min(np.diff(T)) if np.all(np.diff(T) > 0) else (T[-1] - T[0]) / len(T)
    if not spacing > 0:
        raise ValueError("sample times must not all coincide")
    J_hi = np.pi / (2 * spacing)
    grid = np.linspace(J_hi / n_scan, J_hi, n_scan)
    costs = np.array([_sse(J, T, y) for J in grid])
    k = int(np.argmin(costs))
    lo = grid[max(k - 1, 0)] if k > 0 else 0.5 * grid[0]
    hi = grid[min(k + 1, n_scan - 1)]
    res = minimize_scalar(_sse, bounds=(lo, hi), args=(T, y), method="bounded",
                          options={"xatol": 1e-12 * max(1.0, hi)})
    J = float(res.x)
    sse = _sse(J, T, y)
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - sse / sst if sst > 0 else 0.0
    return RabiFit(J, r2, bool(r2 < POOR_FIT_R2))
