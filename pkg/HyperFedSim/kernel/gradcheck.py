from typing import Callable

import numpy as np


def numerical_gradient(
    f: Callable[[], float], x: np.ndarray, step: float = 1e-6
) -> np.ndarray:
    """
    Central finite-difference gradient of a scalar function with respect to ``x``.

    ``x`` is perturbed in place, one entry at a time, and restored afterwards, so ``f`` should
    close over the very array passed here.
    """
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        upper = f()
        flat[i] = original - step
        lower = f()
        flat[i] = original
        out[i] = (upper - lower) / (2 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)
