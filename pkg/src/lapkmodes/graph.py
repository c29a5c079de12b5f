"""k-NN affinity graphs, the graph Laplacian, and its spectral norm."""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .data import DataMatrix

__all__ = ["GraphSpec", "AffinityGraph", "build_knn_graph"]

_POWER_SEED = 1234  # fixed start vector for reproducible power iteration


@dataclass(frozen=True)
class GraphSpec:
    """How to build the affinity graph.

    ``heat_width`` may be the string 'auto', meaning "use the kde bandwidth";
    callers resolve it with :meth:`resolved` before building. ``grid8``
    replaces feature-space k-NN with the 8-neighbor pixel lattice (the data
    must carry an image shape).
    """

    k: int = 5
    weighting: str = "heat"
    heat_width: float | str = "auto"
    grid8: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.weighting not in ("binary", "heat"):
            raise ValueError(f"unknown weighting {self.weighting!r}")
        if self.heat_width != "auto" and not float(self.heat_width) > 0:
            raise ValueError("heat_width must be positive or 'auto'")

    def resolved(self, sigma: float) -> "GraphSpec":
        """Replace heat_width='auto' with the given kde bandwidth."""
        if self.heat_width != "auto":
            return self
        if not np.isfinite(sigma) or sigma <= 0:
            raise ValueError("cannot resolve heat_width='auto' without a finite sigma")
        return GraphSpec(self.k, self.weighting, float(sigma), self.grid8)


class AffinityGraph:
    """Sparse symmetric affinity matrix W with degree vector and L = D - W.

    Immutable after construction; safe to share across threads. The largest
    Laplacian eigenvalue is computed lazily by power iteration and cached.
    """

    def __init__(self, weights: sp.spmatrix, n: int | None = None):
        W = sp.csr_matrix(weights, dtype=float)
        if n is not None and W.shape != (n, n):
            W.resize((n, n))
        if W.shape[0] != W.shape[1]:
            raise ValueError("affinity matrix must be square")
        W.eliminate_zeros()
        if W.diagonal().any():
            raise ValueError("affinity matrix has self-loops")
        if (W != W.T).nnz:
            raise ValueError("affinity matrix is not symmetric")
        if W.nnz and W.data.min() < 0:
            raise ValueError("negative affinity weight")
        self._W = W
        self.degrees = np.asarray(W.sum(axis=1)).ravel()
        self._largest_eig: float | None = None

    @property
    def n(self) -> int:
        return self._W.shape[0]

    @property
    def weights(self) -> sp.csr_matrix:
        return self._W

    @property
    def num_edges(self) -> int:
        return self._W.nnz // 2

    def neighbors(self, i: int):
        """(indices, weights) of node i's neighbors, index-sorted."""
        lo, hi = self._W.indptr[i], self._W.indptr[i + 1]
        return self._W.indices[lo:hi], self._W.data[lo:hi]

    def dense_laplacian(self) -> np.ndarray:
        return np.diag(self.degrees) - self._W.toarray()

    def apply_laplacian(self, Z: np.ndarray) -> np.ndarray:
        """L @ Z computed sparsely as D Z - W Z; cost O(N K rho)."""
        Z = np.asarray(Z, dtype=float)
        if Z.shape[0] != self.n:
            raise ValueError(f"matrix has {Z.shape[0]} rows, graph has {self.n} nodes")
        return self.degrees[:, None] * Z - self._W @ Z

    def laplacian_quadratic(self, Z: np.ndarray) -> float:
        """(1/2) sum_{m,n} w_mn ||z_m - z_n||^2 == trace(Z^T L Z)."""
        Z = np.asarray(Z, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        if Z.shape[0] != self.n:
            raise ValueError(f"matrix has {Z.shape[0]} rows, graph has {self.n} nodes")
        W = self._W.tocoo()
        diff = Z[W.row] - Z[W.col]
        return 0.5 * float(np.einsum("e,ed->", W.data, diff * diff))

    def largest_eigenvalue(self) -> float:
        """Largest eigenvalue of L = D - W by seeded power iteration.

        Cached after the first call. Falls back to the 2*max(degree) upper
        bound if 1000 iterations do not converge the Rayleigh quotient to
        1e-8 relative change.
        """
        if self._largest_eig is not None:
            return self._largest_eig
        bound = 2.0 * (self.degrees.max() if self.n else 0.0)
        if self.n == 0 or self._W.nnz == 0:
            self._largest_eig = 0.0
            return 0.0
        rng = np.random.default_rng(_POWER_SEED)
        v = rng.standard_normal(self.n)
        v /= np.linalg.norm(v)
        rayleigh = 0.0
        result = bound
        for _ in range(1000):
            Lv = self.degrees * v - self._W @ v
            norm = np.linalg.norm(Lv)
            if norm == 0.0:
                result = 0.0
                break
            new = float(v @ Lv)
            v = Lv / norm
            if abs(new - rayleigh) <= 1e-8 * max(abs(new), 1e-300):
                result = new
                break
            rayleigh = new
        self._largest_eig = min(result, bound)
        return self._largest_eig

    def dump_edges(self, path):
        """Write the undirected edge list as 'src,dst,weight' CSV rows."""
        W = sp.triu(self._W, k=1).tocoo()
        with open(path, "w", newline="") as fh:
            fh.write("src,dst,weight\n")
            for i, j, w in zip(W.row, W.col, W.data):
                fh.write(f"{i},{j},{w!r}\n")


def _knn_edges(points, k):
    n = points.shape[0]
    tree = cKDTree(points)
    dist, idx = tree.query(points, k=k + 1)
    # drop the self column; ties may put self later, so mask it explicitly
    rows = np.repeat(np.arange(n), k + 1)
    cols = idx.ravel()
    d = dist.ravel()
    keep = rows != cols
    rows, cols, d = rows[keep], cols[keep], d[keep]
    # keep the first k non-self hits per row
    order = np.argsort(rows, kind="stable")
    rows, cols, d = rows[order], cols[order], d[order]
    counts = np.bincount(rows, minlength=n)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    sel = np.concatenate([np.arange(offsets[i], offsets[i] + min(k, counts[i])) for i in range(n)])
    return rows[sel], cols[sel], d[sel]


def _grid8_edges(height, width):
    """Undirected 8-neighbor lattice edges for an h x w pixel grid."""
    idx = np.arange(height * width).reshape(height, width)
    pairs = []
    pairs.append((idx[:, :-1].ravel(), idx[:, 1:].ravel()))      # east
    pairs.append((idx[:-1, :].ravel(), idx[1:, :].ravel()))      # south
    pairs.append((idx[:-1, :-1].ravel(), idx[1:, 1:].ravel()))   # south-east
    pairs.append((idx[:-1, 1:].ravel(), idx[1:, :-1].ravel()))   # south-west
    rows = np.concatenate([p[0] for p in pairs])
    cols = np.concatenate([p[1] for p in pairs])
    return rows, cols


def build_knn_graph(data: DataMatrix, spec: GraphSpec) -> AffinityGraph:
    """Build the affinity graph for a dataset.

    The directed k-NN relation is symmetrized by union (an edge is kept when
    either endpoint selects the other; both directions carry the same weight
    here since distances are symmetric). Heat weights are
    exp(-||x_m - x_n||^2 / (2 heat_width^2)); binary weights are 1.
    """
    n = data.n
    if spec.grid8:
        if data.image_shape is None:
            raise ValueError("grid8 graphs need data with an image shape")
        h, w = data.image_shape
        if h * w != n:
            raise ValueError("image shape does not match point count")
        rows, cols = _grid8_edges(h, w)
    else:
        if n < spec.k + 1:
            raise ValueError(f"need N >= k+1 points, got N={n}, k={spec.k}")
        rows, cols, _ = _knn_edges(data.points, spec.k)

    if spec.weighting == "heat":
        width = spec.heat_width
        if width == "auto":
            raise ValueError("heat_width='auto' must be resolved before building")
        width = float(width)
        diff = data.points[rows] - data.points[cols]
        vals = np.exp(-np.einsum("ed,ed->e", diff, diff) / (2.0 * width * width))
    else:
        vals = np.ones(rows.shape[0])

    W = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    W = W.maximum(W.T)  # union symmetrization, max of directed weights
    return AffinityGraph(W)
