"""Gaussian kernels, kernel density estimates, and mean-shift ascent.

The kernel convention throughout the optimizers is the unnormalized
G(t) = exp(-t/2); normalization constants cancel in mean-shift
responsibilities and never move an argmax, and omitting them avoids
dimension-dependent underflow. ``kde_eval(..., normalized=True)`` applies
the Gaussian constant for density reporting.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .data import DataMatrix

__all__ = [
    "NumericalError",
    "Kde",
    "MeanShiftResult",
    "kernel",
    "kde_eval",
    "mean_shift_converge",
    "gms_cluster",
    "gms_find_sigma_for_k",
]


class NumericalError(RuntimeError):
    """An iterative numerical procedure failed to produce a usable result."""


def kernel(t: float) -> float:
    """Gaussian profile G(t) = exp(-t/2) for squared scaled distances t >= 0."""
    if t < 0:
        raise ValueError(f"kernel argument must be >= 0, got {t}")
    return math.exp(-t / 2.0)


@dataclass(frozen=True)
class Kde:
    """Kernel density estimate over ``support`` rows with bandwidth sigma.

    ``weights`` defaults to uniform 1/N; a cluster's soft-assignment column
    gives the cluster-weighted kde.
    """

    support: np.ndarray
    sigma: float
    weights: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.support, dtype=float)
        if pts.ndim != 2:
            raise ValueError("support must be an (N, D) array")
        object.__setattr__(self, "support", pts)
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (pts.shape[0],):
                raise ValueError("weights length must match support")
            if w.min() < 0 or not w.max() > 0:
                raise ValueError("weights must be nonnegative, not all zero")
            object.__setattr__(self, "weights", w)

    def effective_weights(self) -> np.ndarray:
        if self.weights is not None:
            return self.weights
        return np.full(self.support.shape[0], 1.0 / self.support.shape[0])


def _sq_scaled_dists(X, x, sigma):
    diff = (X - x) / sigma
    return np.einsum("nd,nd->n", diff, diff)


def kde_eval(kde: Kde, x, normalized: bool = False) -> float:
    """Weighted kde value sum_n w_n G(||(x - x_n)/sigma||^2) at a point.

    The max exponent is factored out before exponentiation so small
    bandwidths in high dimension degrade gracefully. ``normalized`` divides
    by the Gaussian constant (2 pi sigma^2)^{D/2} for honest densities.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (kde.support.shape[1],):
        raise ValueError(
            f"point has dimension {x.shape}, support has D={kde.support.shape[1]}"
        )
    t = _sq_scaled_dists(kde.support, x, kde.sigma)
    m = -0.5 * t.min()
    val = float(np.exp(m) * (kde.effective_weights() @ np.exp(-0.5 * t - m)))
    if normalized:
        d = kde.support.shape[1]
        val /= (2.0 * math.pi * kde.sigma**2) ** (d / 2.0)
    return val


@dataclass
class MeanShiftResult:
    mode: np.ndarray
    iters: int
    density: float
    densities: list[float]
    stalled: bool = False


def mean_shift_converge(
    kde: Kde, x0, tol: float | None = None, max_iter: int = 500
) -> MeanShiftResult:
    """Run the mean-shift fixed-point iteration from x0 up a (weighted) kde.

    Iterates x <- sum_n p(n|x) x_n with responsibilities proportional to
    w_n G(||(x - x_n)/sigma||^2), normalized after subtracting the max
    exponent. Stops when the step is below tol (default 1e-5 * sigma).
    The kde value along the iterates is non-decreasing. If every
    responsibility underflows even after stabilization the start point is
    returned unchanged with ``stalled`` set.
    """
    if tol is None:
        tol = 1e-5 * kde.sigma
    x = np.array(x0, dtype=float)
    w = kde.effective_weights()
    X = kde.support
    densities: list[float] = []
    iters = 0
    for iters in range(1, max_iter + 1):
        logits = -0.5 * _sq_scaled_dists(X, x, kde.sigma)
        m = logits.max()
        resp = w * np.exp(logits - m)
        total = resp.sum()
        densities.append(float(math.exp(m) * total))  # kde value at current x
        if total == 0.0:
            return MeanShiftResult(x, iters - 1, densities[-1], densities, stalled=True)
        x_new = (resp @ X) / total
        step = np.linalg.norm(x_new - x)
        x = x_new
        if step < tol:
            break
    densities.append(kde_eval(kde, x))
    return MeanShiftResult(x, iters, densities[-1], densities)


def _batch_mean_shift(points, sigma, tol, max_iter):
    """Mean-shift every row of ``points`` over the uniform kde of ``points``."""
    X = points
    cur = X.copy()
    active = np.ones(X.shape[0], dtype=bool)
    iters = np.zeros(X.shape[0], dtype=int)
    for _ in range(max_iter):
        if not active.any():
            break
        sub = cur[active]
        # squared distances from active iterates to every support point
        d2 = (
            np.einsum("md,md->m", sub, sub)[:, None]
            + np.einsum("nd,nd->n", X, X)[None, :]
            - 2.0 * sub @ X.T
        )
        logits = -0.5 * np.maximum(d2, 0.0) / (sigma * sigma)
        logits -= logits.max(axis=1, keepdims=True)
        resp = np.exp(logits)
        new = (resp @ X) / resp.sum(axis=1)[:, None]
        moved = np.linalg.norm(new - sub, axis=1) >= tol
        iters[active] += 1
        cur[active] = new
        idx = np.where(active)[0]
        active[idx[~moved]] = False
    return cur, iters


def gms_cluster(data: DataMatrix, sigma: float, merge_tol: float | None = None):
    """Gaussian mean-shift clustering: one cluster per kde mode.

    Runs mean-shift from every data point, then merges converged points
    whose final iterates fall within ``merge_tol`` (default 1e-2 * sigma) of
    each other, by single linkage. Returns (modes, labels); labels follow
    first appearance in point-index order, and each mode is the
    highest-density converged iterate of its group.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if merge_tol is None:
        merge_tol = 1e-2 * sigma
    X = data.points
    converged, _ = _batch_mean_shift(X, sigma, tol=1e-5 * sigma, max_iter=500)

    tree = cKDTree(converged)
    pairs = tree.query_pairs(merge_tol, output_type="ndarray")
    n = X.shape[0]
    adj = sp.csr_matrix(
        (np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n)
    )
    _, comp = connected_components(adj, directed=False)

    # relabel components by first appearance; pick the densest iterate as mode
    kde = Kde(X, sigma)
    density = np.array([kde_eval(kde, c) for c in converged])
    labels = np.empty(n, dtype=int)
    modes = []
    seen: dict[int, int] = {}
    for i in range(n):
        c = comp[i]
        if c not in seen:
            members = np.where(comp == c)[0]
            best = members[np.argmax(density[members])]
            seen[c] = len(modes)
            modes.append(converged[best])
        labels[i] = seen[c]
    return np.asarray(modes), labels


def gms_find_sigma_for_k(
    data: DataMatrix, K: int, sigma_lo: float, sigma_hi: float, max_iter: int = 30
) -> float:
    """Largest bandwidth that yields exactly K mean-shift modes.

    Bisects on log sigma between a small bandwidth with at least K modes and
    a large one with at most K. Raises NumericalError when the bracket is
    invalid or no tested bandwidth hits K within ``max_iter`` probes.
    """
    if not 0 < sigma_lo < sigma_hi:
        raise ValueError("need 0 < sigma_lo < sigma_hi")

    def count(sig):
        return gms_cluster(data, sig)[0].shape[0]

    c_lo, c_hi = count(sigma_lo), count(sigma_hi)
    if not c_lo >= K >= c_hi:
        raise NumericalError(
            f"invalid bracket: {c_lo} modes at sigma={sigma_lo}, "
            f"{c_hi} at sigma={sigma_hi}, want K={K}"
        )
    best = None
    if c_hi == K:
        best = sigma_hi
    elif c_lo == K:
        best = sigma_lo
    lo, hi = math.log(sigma_lo), math.log(sigma_hi)
    for _ in range(max_iter):
        mid = math.exp((lo + hi) / 2.0)
        c = count(mid)
        if c == K:
            if best is None or mid > best:
                best = mid
            lo = math.log(mid)  # push toward larger sigma still giving K
        elif c > K:
            lo = math.log(mid)
        else:
            hi = math.log(mid)
    if best is None:
        raise NumericalError(
            f"no bandwidth in [{sigma_lo}, {sigma_hi}] produced exactly {K} modes"
        )
    return float(best)
