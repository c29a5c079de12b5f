"""Laplacian K-modes training: alternating C-step / Z-step optimization.

The objective being minimized is

    lambda * trace(Z^T L Z) - sum_{n,k} b_nk z_nk

over row-stochastic Z and centroids C, where b_nk = exp(-||(x_n-c_k)/sigma||^2/2)
and L is the unnormalized graph Laplacian. Setting lambda = 0 recovers
K-modes; sigma = inf additionally turns the data term into the K-means
surrogate (negative squared distances) and the C-step into weighted means,
giving Lloyd's K-means at lambda = 0 and Laplacian K-means at lambda > 0.
"""

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import DataMatrix
from .density import Kde, mean_shift_converge
from .graph import AffinityGraph, GraphSpec
from .simplex import project_rows

__all__ = [
    "HyperParams",
    "Tolerances",
    "CentroidSet",
    "LapKModesModel",
    "validate_assignments",
    "compute_B",
    "objective",
    "zstep",
    "cstep",
    "fit",
    "fit_homotopy",
    "kmeans_init",
    "lloyd_kmeans",
    "harden",
    "save_model",
    "load_model",
]

MODEL_VERSION = "lapkm-model/1"


@dataclass(frozen=True)
class HyperParams:
    """Cluster count K, Laplacian weight lambda, kde bandwidth sigma.

    ``sigma = inf`` is the explicit K-means-limit sentinel.
    """

    k: int
    lam: float
    sigma: float
    graph: GraphSpec = field(default_factory=GraphSpec)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("K must be >= 1")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive (or inf)")


@dataclass(frozen=True)
class Tolerances:
    """Stopping tolerances for the inner steps and the outer alternation.

    ``eps_c = None`` means 1e-5 * sigma, resolved where the C-step runs.
    """

    eps_c: float | None = None
    eps_z: float = 1e-6
    max_zstep_iters: int = 1000
    max_cstep_iters: int = 500
    outer_tol: float = 1e-8
    max_outer: int = 100

    def __post_init__(self):
        if self.eps_c is not None and not self.eps_c > 0:
            raise ValueError("eps_c must be positive")
        for name in ("eps_z", "outer_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("max_zstep_iters", "max_cstep_iters", "max_outer"):
            if not getattr(self, name) >= 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass
class CentroidSet:
    """K x D centroid matrix plus the kde bandwidth they were fit with."""

    C: np.ndarray
    sigma: float

    def __post_init__(self):
        self.C = np.asarray(self.C, dtype=float)
        if self.C.ndim != 2:
            raise ValueError("centroids must be a (K, D) array")
        if not np.all(np.isfinite(self.C)):
            raise ValueError("centroids contain NaN or Inf")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive (or inf)")

    @property
    def k(self) -> int:
        return self.C.shape[0]


def validate_assignments(Z, n=None, k=None, tol=1e-8):
    """Check Z is row-stochastic (rows >= 0, summing to 1 within tol)."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2:
        raise ValueError("assignments must be an (N, K) matrix")
    if n is not None and Z.shape[0] != n:
        raise ValueError(f"assignments have {Z.shape[0]} rows, expected {n}")
    if k is not None and Z.shape[1] != k:
        raise ValueError(f"assignments have {Z.shape[1]} columns, expected {k}")
    if Z.min(initial=0.0) < -tol:
        raise ValueError("negative assignment value")
    if Z.size and np.abs(Z.sum(axis=1) - 1.0).max() > tol:
        raise ValueError("assignment rows must sum to 1")
    return Z


def _sq_dists(X, C):
    """Squared Euclidean distances, (N, K) for (N, D) x (K, D)."""
    d2 = (
        np.einsum("nd,nd->n", X, X)[:, None]
        + np.einsum("kd,kd->k", C, C)[None, :]
        - 2.0 * X @ C.T
    )
    return np.maximum(d2, 0.0)


def compute_B(data: DataMatrix, centroids: CentroidSet) -> np.ndarray:
    """Data-centroid gain matrix entering the objective linearly.

    Finite sigma gives b_nk = exp(-||(x_n - c_k)/sigma||^2 / 2), raw values
    with no stabilization since they are summed, not normalized. The
    sigma = inf sentinel returns the K-means surrogate -||x_n - c_k||^2,
    whose row argmax is the nearest centroid.
    """
    d2 = _sq_dists(data.points, centroids.C)
    if math.isinf(centroids.sigma):
        return -d2
    return np.exp(-0.5 * d2 / (centroids.sigma**2))


def objective(graph: AffinityGraph, Z, B, lam: float) -> float:
    """lambda * trace(Z^T L Z) - sum_nk b_nk z_nk."""
    Z = np.asarray(Z, dtype=float)
    B = np.asarray(B, dtype=float)
    if Z.shape != B.shape:
        raise ValueError(f"Z shape {Z.shape} != B shape {B.shape}")
    smooth = lam * graph.laplacian_quadratic(Z) if lam > 0 else 0.0
    return smooth - float(np.einsum("nk,nk->", B, Z))


def _hard_rows(B):
    """One-hot rows at the row argmax of B (ties to the lowest index)."""
    Z = np.zeros_like(B, dtype=float)
    Z[np.arange(B.shape[0]), np.argmax(B, axis=1)] = 1.0
    return Z


def zstep(
    graph: AffinityGraph,
    B: np.ndarray,
    lam: float,
    Z_init: np.ndarray,
    tol: Tolerances = Tolerances(),
) -> np.ndarray:
    """Solve the assignment QP by accelerated gradient projection.

    Constant stepsize s = 1/(2 lambda M) with M the largest Laplacian
    eigenvalue; each iterate is projected row-wise onto the simplex, so
    every intermediate Z is feasible and early exit is valid. Acceleration
    is not monotone, so the best-objective feasible iterate (including the
    warm start) is returned. lambda = 0, or a graph with no edges, reduces
    to the closed-form row argmax.
    """
    B = np.asarray(B, dtype=float)
    Z0 = validate_assignments(Z_init, n=B.shape[0], k=B.shape[1])
    M = graph.largest_eigenvalue()
    if lam == 0.0 or M == 0.0:
        return _hard_rows(B)

    s = 1.0 / (2.0 * lam * M)
    Z = Z0.copy()
    Y = Z0.copy()
    t = 1.0
    best = Z0
    best_obj = objective(graph, Z0, B, lam)
    for _ in range(tol.max_zstep_iters):
        G = 2.0 * lam * graph.apply_laplacian(Y) - B
        Z_new = project_rows(Y - s * G)
        obj = objective(graph, Z_new, B, lam)
        if obj < best_obj:
            best_obj = obj
            best = Z_new
        t_new = (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0
        Y = Z_new + ((t - 1.0) / t_new) * (Z_new - Z)
        change = np.linalg.norm(Z_new - Z, axis=1).max()
        Z, t = Z_new, t_new
        if change < tol.eps_z:
            break
    return best


@dataclass
class CStepResult:
    centroids: "CentroidSet"
    frozen: list[int]
    stalled: list[int]
    trajectories: list[list[float]]  # per-cluster kde values along mean-shift


def cstep(
    data: DataMatrix,
    Z: np.ndarray,
    centroids_in: CentroidSet,
    tol: Tolerances = Tolerances(),
) -> CStepResult:
    """Update each centroid by weighted mean-shift on its cluster kde.

    Cluster k maximizes sum_n z_nk G(||(x_n - c_k)/sigma||^2) starting from
    the incoming centroid, so the per-cluster objective never decreases.
    sigma = inf takes the weighted mean instead (the K-means M-step).
    Clusters whose weight mass is below 1e-12 keep their centroid and are
    reported as frozen.
    """
    Z = validate_assignments(Z, n=data.n, k=centroids_in.k)
    sigma = centroids_in.sigma
    C = centroids_in.C.copy()
    frozen: list[int] = []
    stalled: list[int] = []
    trajectories: list[list[float]] = []
    for k in range(centroids_in.k):
        w = Z[:, k]
        mass = w.sum()
        if mass < 1e-12:
            frozen.append(k)
            trajectories.append([])
            continue
        if math.isinf(sigma):
            C[k] = (w @ data.points) / mass
            trajectories.append([])
            continue
        eps_c = tol.eps_c if tol.eps_c is not None else 1e-5 * sigma
        res = mean_shift_converge(
            Kde(data.points, sigma, weights=w),
            C[k],
            tol=eps_c,
            max_iter=tol.max_cstep_iters,
        )
        C[k] = res.mode
        trajectories.append(res.densities)
        if res.stalled:
            stalled.append(k)
    return CStepResult(CentroidSet(C, sigma), frozen, stalled, trajectories)


@dataclass
class LapKModesModel:
    """Everything needed to reuse or extend a training run.

    ``history`` holds the objective value after every outer alternation and
    is non-increasing when both steps run to tolerance. ``flags`` collects
    frozen/stalled cluster events. Diagnostics (mean-shift kde trajectories
    and per-alternation hard labels) stay in memory and are not persisted.
    """

    hyper: HyperParams
    tolerances: Tolerances
    centroids: CentroidSet
    assignments: np.ndarray
    training_data: DataMatrix
    objective: float
    history: list[float]
    flags: dict
    ms_trajectories: list[list[list[float]]] = field(default_factory=list, repr=False)
    label_history: list[np.ndarray] = field(default_factory=list, repr=False)
    _graph: AffinityGraph | None = field(default=None, repr=False)

    def graph(self) -> AffinityGraph:
        """The training affinity graph, rebuilt deterministically if needed."""
        from .graph import build_knn_graph

        if self._graph is None:
            self._graph = build_knn_graph(self.training_data, self.hyper.graph)
        return self._graph

    def labels(self) -> np.ndarray:
        return harden(self.assignments)


def harden(Z) -> np.ndarray:
    """Row argmax labels, ties to the lowest index."""
    Z = np.asarray(Z, dtype=float)
    return np.argmax(Z, axis=1)


def lloyd_kmeans(X, C_init, max_iter=100):
    """Plain Lloyd iteration from given centroids.

    Ties in assignment go to the lowest centroid index; empty clusters keep
    their previous centroid. Returns (centroids, labels, objective).
    """
    C = np.array(C_init, dtype=float)
    k = C.shape[0]
    labels = None
    for _ in range(max_iter):
        new_labels = np.argmin(_sq_dists(X, C), axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            members = X[labels == j]
            if members.shape[0]:
                C[j] = members.mean(axis=0)
    d2 = _sq_dists(X, C)
    labels = np.argmin(d2, axis=1)
    obj = float(d2[np.arange(X.shape[0]), labels].sum())
    return C, labels, obj


def _kmeanspp_seed(X, k, rng):
    """k-means++ D^2 seeding."""
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = np.einsum("nd,nd->n", X - centers[0], X - centers[0])
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j] = X[rng.integers(n)]
        else:
            centers[j] = X[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.einsum("nd,nd->n", X - centers[j], X - centers[j]))
    return centers


def kmeans_init(data: DataMatrix, K: int, restarts: int = 10, seed: int = 0) -> CentroidSet:
    """Best-of-restarts K-means centroids (k-means++ seeding, Lloyd runs).

    Returns the centroids of the restart with the lowest K-means objective;
    deterministic for a fixed seed. The bandwidth on the returned set is the
    inf sentinel (callers re-attach their own sigma).
    """
    if K > data.n:
        raise ValueError(f"K={K} exceeds N={data.n}")
    rng = np.random.default_rng(seed)
    best_C, best_obj = None, np.inf
    for _ in range(max(1, restarts)):
        C0 = _kmeanspp_seed(data.points, K, rng)
        C, _, obj = lloyd_kmeans(data.points, C0)
        if obj < best_obj:
            best_obj, best_C = obj, C
    return CentroidSet(best_C, math.inf)


def fit(
    data: DataMatrix,
    graph: AffinityGraph,
    hyper: HyperParams,
    tol: Tolerances = Tolerances(),
    Z_init: np.ndarray | None = None,
    C_init: CentroidSet | None = None,
    restarts: int = 10,
    seed: int = 0,
) -> LapKModesModel:
    """Alternate the C-step and Z-step until the objective stalls.

    Defaults initialize centroids from K-means and assignments from the
    hard argmax of the data-centroid gains. Both steps warm-start from the
    previous values, so with steps run to tolerance the recorded objective
    history is non-increasing.
    """
    if graph.n != data.n:
        raise ValueError("graph size does not match dataset")
    if C_init is None:
        C_init = CentroidSet(kmeans_init(data, hyper.k, restarts, seed).C, hyper.sigma)
    else:
        C_init = CentroidSet(C_init.C, hyper.sigma)
    if C_init.k != hyper.k:
        raise ValueError("C_init has wrong number of centroids")
    if Z_init is None:
        Z = _hard_rows(compute_B(data, C_init))
    else:
        Z = validate_assignments(Z_init, n=data.n, k=hyper.k).copy()

    centroids = C_init
    history: list[float] = []
    flags = {"frozen_clusters": [], "stalled_clusters": []}
    trajectories: list[list[list[float]]] = []
    label_history: list[np.ndarray] = []
    obj = math.inf
    for _ in range(tol.max_outer):
        cres = cstep(data, Z, centroids, tol)
        centroids = cres.centroids
        flags["frozen_clusters"].extend(cres.frozen)
        flags["stalled_clusters"].extend(cres.stalled)
        trajectories.append(cres.trajectories)

        B = compute_B(data, centroids)
        Z = zstep(graph, B, hyper.lam, Z, tol)
        label_history.append(harden(Z))

        new_obj = objective(graph, Z, B, hyper.lam)
        history.append(new_obj)
        if math.isfinite(obj) and abs(new_obj - obj) <= tol.outer_tol * max(1.0, abs(obj)):
            obj = new_obj
            break
        obj = new_obj

    flags["frozen_clusters"] = sorted(set(flags["frozen_clusters"]))
    flags["stalled_clusters"] = sorted(set(flags["stalled_clusters"]))
    return LapKModesModel(
        hyper=hyper,
        tolerances=tol,
        centroids=centroids,
        assignments=Z,
        training_data=data,
        objective=obj,
        history=history,
        flags=flags,
        ms_trajectories=trajectories,
        label_history=label_history,
        _graph=graph,
    )


def _interp_schedule(start, end, steps):
    """Geometric interpolation, linear when an endpoint is zero."""
    if steps == 1:
        return [float(end)]
    frac = np.arange(steps) / (steps - 1)
    if start == 0.0 or end == 0.0:
        return list(start + (end - start) * frac)
    if math.isinf(start) or math.isinf(end):
        raise ValueError("schedule endpoints must be finite")
    return list(start * (end / start) ** frac)


def fit_homotopy(
    data: DataMatrix,
    graph: AffinityGraph,
    hyper_target: HyperParams,
    schedule: dict,
    tol: Tolerances = Tolerances(),
    restarts: int = 10,
    seed: int = 0,
) -> LapKModesModel:
    """Continuation from an easy regime to the target hyperparameters.

    ``schedule`` maps sigma (and optionally lambda) geometrically from
    'sigma_start' down to 'sigma_end' over 'steps' stages ('lambda_start' /
    'lambda_end' default to the target lambda). Stage 0 starts from the
    K-means initialization; every later stage warm-starts from the previous
    stage's assignments and centroids. The returned model's history
    concatenates the per-stage objective histories (stage boundaries are
    where sigma changes, so the objective is only monotone within a stage).
    """
    steps = int(schedule["steps"])
    if steps < 1:
        raise ValueError("schedule needs steps >= 1")
    s_start = float(schedule["sigma_start"])
    s_end = float(schedule["sigma_end"])
    if not s_start >= s_end > 0:
        raise ValueError("need sigma_start >= sigma_end > 0")
    l_start = float(schedule.get("lambda_start", hyper_target.lam))
    l_end = float(schedule.get("lambda_end", hyper_target.lam))
    sigmas = _interp_schedule(s_start, s_end, steps)
    lams = _interp_schedule(l_start, l_end, steps)

    model = None
    history: list[float] = []
    stage_hist: list[dict] = []
    for sig, lam in zip(sigmas, lams):
        hyper = replace(hyper_target, lam=lam, sigma=sig)
        if model is None:
            model = fit(data, graph, hyper, tol, restarts=restarts, seed=seed)
        else:
            model = fit(
                data,
                graph,
                hyper,
                tol,
                Z_init=model.assignments,
                C_init=model.centroids,
            )
        history.extend(model.history)
        stage_hist.append({"sigma": sig, "lambda": lam, "objective": model.objective})
    model.history = history
    model.flags["homotopy_stages"] = stage_hist
    model.hyper = replace(hyper_target, lam=lams[-1], sigma=sigmas[-1])
    return model


def _tol_to_dict(tol: Tolerances) -> dict:
    return {
        "eps_c": tol.eps_c,
        "eps_z": tol.eps_z,
        "max_zstep_iters": tol.max_zstep_iters,
        "max_cstep_iters": tol.max_cstep_iters,
        "outer_tol": tol.outer_tol,
        "max_outer": tol.max_outer,
    }


def _num(x):
    """JSON-safe float: inf becomes the string 'inf'."""
    return "inf" if math.isinf(x) else float(x)


def _denum(x):
    return math.inf if x == "inf" else float(x)


def save_model(model: LapKModesModel, path):
    """Persist a model as a single JSON document (version lapkm-model/1)."""
    g = model.hyper.graph
    doc = {
        "version": MODEL_VERSION,
        "hyperparams": {
            "k": model.hyper.k,
            "lambda": model.hyper.lam,
            "sigma": _num(model.hyper.sigma),
            "graph": {
                "k": g.k,
                "weighting": g.weighting,
                "heat_width": g.heat_width if g.heat_width == "auto" else float(g.heat_width),
                "grid8": g.grid8,
            },
        },
        "tolerances": _tol_to_dict(model.tolerances),
        "centroids": model.centroids.C.tolist(),
        "assignments": np.asarray(model.assignments).tolist(),
        "training_data": model.training_data.points.tolist(),
        "image_shape": list(model.training_data.image_shape)
        if model.training_data.image_shape
        else None,
        "objective": model.objective,
        "history": model.history,
        "flags": model.flags,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_model(path) -> LapKModesModel:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')!r}")
    h = doc["hyperparams"]
    g = h["graph"]
    spec = GraphSpec(
        k=int(g["k"]),
        weighting=g["weighting"],
        heat_width=g["heat_width"] if g["heat_width"] == "auto" else float(g["heat_width"]),
        grid8=bool(g["grid8"]),
    )
    hyper = HyperParams(int(h["k"]), float(h["lambda"]), _denum(h["sigma"]), spec)
    tol = Tolerances(**doc["tolerances"])
    shape = tuple(doc["image_shape"]) if doc.get("image_shape") else None
    data = DataMatrix(np.asarray(doc["training_data"], dtype=float), image_shape=shape)
    sigma = hyper.sigma
    return LapKModesModel(
        hyper=hyper,
        tolerances=tol,
        centroids=CentroidSet(np.asarray(doc["centroids"], dtype=float), sigma),
        assignments=validate_assignments(np.asarray(doc["assignments"], dtype=float)),
        training_data=data,
        objective=float(doc["objective"]),
        history=[float(v) for v in doc["history"]],
        flags=doc["flags"],
    )
