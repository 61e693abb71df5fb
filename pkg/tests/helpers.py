"""Shared test oracles: central finite differences and relative error."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


def central_difference(
    f: Callable[[], float],
    arrays: Sequence[np.ndarray],
    eps: float = 1e-5,
) -> list[np.ndarray]:
    """Numeric gradient of f() w.r.t. each array, perturbing in place."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f()
            flat[i] = orig - eps
            lo = f()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * eps)
        grads.append(g)
    return grads


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-2) -> float:
    """Max elementwise |a-n| / max(floor, |a|, |n|).

    The floor turns the comparison absolute for near-zero gradients, where
    central differences only carry ~1e-11 of precision anyway.
    """
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    denom = np.maximum(floor, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
