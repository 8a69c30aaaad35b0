"""Central finite differences, used as the independent oracle for every analytic gradient."""

from __future__ import annotations

from typing import Callable

import numpy as np


def central_difference(func: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Entrywise ``(f(x + h e_i) - f(x - h e_i)) / 2h``; ``x`` is not modified."""
    x = np.array(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        orig = x.flat[i]
        x.flat[i] = orig + h
        up = func(x)
        x.flat[i] = orig - h
        down = func(x)
        x.flat[i] = orig
        grad.flat[i] = (up - down) / (2.0 * h)
    return grad


def symmetric_difference(func: Callable[[np.ndarray], float], s: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Finite differences of a function of a symmetric matrix.

    Entry ``(i, j)`` perturbs ``s[i, j]`` and ``s[j, i]`` together, so for
    ``i != j`` it estimates ``G[i, j] + G[j, i]`` of the unconstrained gradient
    ``G``; the diagonal estimates ``G[i, i]``.
    """
    s = np.array(s, dtype=float)
    n = s.shape[0]
    out = np.zeros_like(s)
    for i in range(n):
        for j in range(i, n):
            bump = np.zeros_like(s)
            bump[i, j] = bump[j, i] = h
            val = (func(s + bump) - func(s - bump)) / (2.0 * h)
            out[i, j] = out[j, i] = val
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """``||a - n|| / max(||a||, ||n||, floor)`` over the whole array."""
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    scale = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / scale)
