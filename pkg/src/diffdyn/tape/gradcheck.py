"""Central finite-difference validation of tape gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

GradFn = Callable[[np.ndarray], tuple[float, np.ndarray | None]]


def finite_difference_gradient(f: GradFn, x: np.ndarray,
                               step: float = 1e-6) -> np.ndarray:
    """Central differences of the scalar part of f, coordinate by coordinate."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xp[i] += step
        fp, _ = f(xp)
        xm = x.copy()
        xm[i] -= step
        fm, _ = f(xm)
        g[i] = (fp - fm) / (2.0 * step)
    return g


def finite_difference_check(f: GradFn, x: np.ndarray,
                            step: float = 1e-6) -> float:
    """Max relative error between the tape gradient of f and central differences.

    ``f(x)`` must return ``(scalar_value, gradient_vector)`` where the gradient
    is produced by the tape.  Returns ``max_i |g_tape - g_fd| /
    max(1e-12, |g_fd|)``; NaN anywhere in f propagates into the result.
    """
    x = np.asarray(x, dtype=np.float64)
    _, g_tape = f(x)
    g_tape = np.asarray(g_tape, dtype=np.float64)
    g_fd = finite_difference_gradient(f, x, step)
    denom = np.maximum(1e-12, np.abs(g_fd))
    return float(np.max(np.abs(g_tape - g_fd) / denom))
