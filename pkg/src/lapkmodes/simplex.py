"""Exact Euclidean projection onto the probability simplex.

The simplex is {z : z >= 0, sum(z) = 1}. Projection is computed by the
sort-and-threshold scheme: sort descending, find the largest prefix whose
running average keeps every kept coordinate positive, subtract that
threshold and clip. Cost is O(K log K) per vector.
"""

import numpy as np

__all__ = ["project_simplex", "project_rows"]


def project_rows(V):
    """Project each row of an (N, K) array onto the probability simplex.

    Ties in the internal sort are resolved arbitrarily; the projection is
    unique regardless of tie order.
    """
    V = np.asarray(V, dtype=float)
    if V.ndim != 2:
        raise ValueError(f"expected 2-D array, got shape {V.shape}")
    n, k = V.shape
    if k == 0:
        raise ValueError("cannot project onto a 0-dimensional simplex")
    if not np.all(np.isfinite(V)):
        raise ValueError("non-finite entries in projection input")
    if k == 1:
        return np.ones_like(V)

    U = np.sort(V, axis=1)[:, ::-1]
    css = np.cumsum(U, axis=1) - 1.0
    idx = np.arange(1, k + 1)
    # largest prefix length rho with u_(rho) - (sum_{i<=rho} u_(i) - 1)/rho > 0
    rho = np.count_nonzero(U - css / idx > 0, axis=1)
    rho = np.maximum(rho, 1)  # guard: first prefix always qualifies analytically
    theta = css[np.arange(n), rho - 1] / rho
    return np.maximum(V - theta[:, None], 0.0)


def project_simplex(v):
    """Project a single length-K vector onto the probability simplex.

    Returns argmin_{z in simplex} ||z - v||^2. K = 1 returns (1,).
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ValueError(f"expected 1-D vector, got shape {v.shape}")
    return project_rows(v[None, :])[0]
