"""Out-of-sample soft assignment for points not seen during training.

Adding a test point x to the trained problem with everything else frozen
reduces to projecting the K-vector zbar + gamma*q onto the simplex, where
zbar averages the neighbors' training assignments, q is the normalized
data-centroid kernel, and gamma balances the two. Sweeping the same closed
form over the training rows is a coordinate-descent solver for the
assignment step, used here as an independent cross-check.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .lapkm import LapKModesModel, compute_B, objective, validate_assignments
from .simplex import project_rows, project_simplex

__all__ = ["OosDecomposition", "oos_decompose", "oos_predict", "predict_batch", "zstep_by_oos_sweep"]


@dataclass(frozen=True)
class OosDecomposition:
    """Pieces of the closed-form prediction: project(z_bar + gamma * q).

    ``gamma`` is math.inf when the Laplacian term is absent (lambda = 0, or
    an isolated test point with zero affinity to the training set); the
    prediction then degenerates to the argmax of q.
    """

    z_bar: np.ndarray
    q: np.ndarray
    gamma: float


def _test_affinities(model: LapKModesModel, x):
    """Affinity weights from a test point to its k nearest training points.

    Reuses the training graph rule: same neighbor count and weighting; a
    heat width of 'auto' resolves against the model bandwidth.
    """
    spec = model.hyper.graph
    X = model.training_data.points
    k = min(spec.k, X.shape[0])
    tree = cKDTree(X)
    dist, idx = tree.query(x, k=k)
    dist = np.atleast_1d(dist)
    idx = np.atleast_1d(idx)
    if spec.weighting == "heat":
        width = spec.heat_width
        if width == "auto":
            if math.isinf(model.hyper.sigma):
                raise ValueError("cannot resolve heat_width='auto' on an inf-sigma model")
            width = model.hyper.sigma
        w = np.exp(-0.5 * (dist / float(width)) ** 2)
    else:
        w = np.ones_like(dist)
    return idx, w


def _centroid_gains(model: LapKModesModel, x):
    """Kernel values against each centroid, plus the simplex-normalized q.

    For finite sigma these are the raw kernels whose sum feeds gamma. The
    inf-sigma (K-means limit) model uses shifted negative squared distances,
    which differ from the true gains by a row constant that the simplex
    projection ignores.
    """
    C = model.centroids.C
    diff = x[None, :] - C
    d2 = np.einsum("kd,kd->k", diff, diff)
    if math.isinf(model.hyper.sigma):
        g = d2.max() - d2
        total = g.sum()
        q = g / total if total > 0 else np.full(C.shape[0], 1.0 / C.shape[0])
        return g, q
    t = d2 / model.hyper.sigma**2
    g = np.exp(-0.5 * t)
    stab = np.exp(-0.5 * (t - t.min()))  # ratio survives even when g underflows
    return g, stab / stab.sum()


def oos_decompose(model: LapKModesModel, x) -> OosDecomposition:
    """Split the prediction for x into (z_bar, q, gamma)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (model.training_data.d,):
        raise ValueError(
            f"point has shape {x.shape}, model dimension is {model.training_data.d}"
        )
    K = model.hyper.k
    g, q = _centroid_gains(model, x)
    idx, w = _test_affinities(model, x)
    w_sum = w.sum()
    if model.hyper.lam == 0.0 or w_sum == 0.0:
        return OosDecomposition(np.full(K, 1.0 / K), q, math.inf)
    Z = np.asarray(model.assignments)
    z_bar = (w / w_sum) @ Z[idx]
    gamma = float(g.sum() / (2.0 * model.hyper.lam * w_sum))
    return OosDecomposition(z_bar, q, gamma)


def oos_predict(model: LapKModesModel, x) -> np.ndarray:
    """Soft assignment of an unseen point: project(z_bar + gamma * q).

    gamma = inf returns the one-hot argmax of q (the projection's limit);
    K = 1 returns (1,). Cost is O(ND) per point.
    """
    if model.hyper.k == 1:
        return np.ones(1)
    dec = oos_decompose(model, x)
    if math.isinf(dec.gamma):
        out = np.zeros(model.hyper.k)
        out[int(np.argmax(dec.q))] = 1.0
        return out
    return project_simplex(dec.z_bar + dec.gamma * dec.q)


def predict_batch(model: LapKModesModel, points) -> np.ndarray:
    """oos_predict over the rows of an (M, D) array."""
    pts = np.asarray(points, dtype=float)
    return np.vstack([oos_predict(model, p) for p in pts])


def _row_closed_form(z_neighbors, w, b_row, lam):
    """Optimal simplex row given neighbor assignments and fixed gains.

    Minimizes lam * sum_n w_n ||z - z_n||^2 - b.z over the simplex, which is
    project(z_bar + b / (2 lam sum w)).
    """
    w_sum = w.sum()
    if lam == 0.0 or w_sum == 0.0:
        out = np.zeros_like(b_row)
        out[int(np.argmax(b_row))] = 1.0
        return out
    z_bar = (w / w_sum) @ z_neighbors
    return project_simplex(z_bar + b_row / (2.0 * lam * w_sum))


def zstep_by_oos_sweep(
    model: LapKModesModel,
    Z_init: np.ndarray | None = None,
    obj_tol: float = 1e-8,
    max_sweeps: int = 1000,
) -> np.ndarray:
    """Solve the assignment step by sweeping the closed form over rows.

    Coordinate descent: each row update is the exact minimizer of the
    objective in that row, so the objective never increases. Slower than
    the accelerated solver but independent of it. Stops when a full sweep
    improves the objective by less than ``obj_tol``.
    """
    data = model.training_data
    graph = model.graph()
    lam = model.hyper.lam
    B = compute_B(data, model.centroids)
    if Z_init is None:
        Z = np.asarray(model.assignments, dtype=float).copy()
    else:
        Z = validate_assignments(Z_init, n=data.n, k=model.hyper.k).copy()
    prev = objective(graph, Z, B, lam)
    for _ in range(max_sweeps):
        for n in range(data.n):
            nbr, w = graph.neighbors(n)
            Z[n] = _row_closed_form(Z[nbr], w, B[n], lam)
        cur = objective(graph, Z, B, lam)
        if prev - cur < obj_tol:
            break
        prev = cur
    return Z
