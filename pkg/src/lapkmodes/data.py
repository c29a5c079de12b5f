"""Dataset container, CSV/PGM I/O, synthetic generators, bandwidth heuristic."""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "DataError",
    "DataMatrix",
    "SyntheticSpec",
    "load_csv",
    "save_csv",
    "read_labels",
    "save_labels",
    "normalize_unit_rows",
    "generate_synthetic",
    "bandwidth_knn_heuristic",
    "load_pgm",
    "save_pgm",
]

# Angular scale applied to the spiral parameter so [0.25, 5.25] covers ~2.5 turns.
SPIRAL_A = 0.5
SPIRAL_B = 0.35
SPIRAL_T_LO = 0.25
SPIRAL_T_HI = 5.25
SPIRAL_ANGLE_SCALE = 3.0


class DataError(ValueError):
    """Malformed input data (bad CSV/PGM, invalid rows, wrong labels)."""


@dataclass(frozen=True)
class DataMatrix:
    """An N x D dataset with optional integer class labels.

    Labels use -1 as the outlier/no-class marker; non-negative ids must be
    contiguous from 0. ``image_shape`` is set by the PGM loader so pixel-grid
    graphs can recover (height, width).
    """

    points: np.ndarray
    labels: np.ndarray | None = None
    image_shape: tuple[int, int] | None = None

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=float))
        if pts.ndim != 2:
            raise DataError(f"points must be 2-D, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise DataError("points contain NaN or Inf")
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=int)
            if lab.shape != (pts.shape[0],):
                raise DataError(
                    f"labels length {lab.shape} does not match N={pts.shape[0]}"
                )
            classes = np.unique(lab[lab >= 0])
            if classes.size and not np.array_equal(
                classes, np.arange(classes.size)
            ):
                raise DataError(
                    f"non-negative label ids must be contiguous from 0, got {classes}"
                )
            if lab.size and lab.min() < -1:
                raise DataError("labels below -1 are not allowed")
            object.__setattr__(self, "labels", lab)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters for the synthetic generators ('spirals' or 'moons')."""

    kind: str
    points_per_cluster: int = 400
    outliers: int = 0
    noise_sd: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("spirals", "moons"):
            raise DataError(f"unknown synthetic kind {self.kind!r}")
        if self.points_per_cluster < 1:
            raise DataError("points_per_cluster must be >= 1")
        if self.noise_sd < 0:
            raise DataError("noise_sd must be >= 0")
        if self.outliers < 0:
            raise DataError("outliers must be >= 0")


def _parse_row(cells, lineno):
    try:
        return [float(c) for c in cells]
    except ValueError:
        bad = next(c for c in cells if not _is_float(c))
        raise DataError(f"line {lineno}: non-numeric cell {bad!r}") from None


def _is_float(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def load_csv(path, has_labels=False) -> DataMatrix:
    """Load a numeric CSV into a DataMatrix.

    A header row is skipped when no cell of the first row parses as a number.
    With ``has_labels`` the last column is taken as an integer class label.
    Raises DataError naming the offending line for ragged rows, non-numeric
    cells, or an empty file.
    """
    rows = []
    width = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, cells in enumerate(reader, start=1):
            cells = [c.strip() for c in cells]
            if not cells or all(c == "" for c in cells):
                continue
            if lineno == 1 and not any(_is_float(c) for c in cells):
                continue  # header
            values = _parse_row(cells, lineno)
            if width is None:
                width = len(values)
                if has_labels and width < 2:
                    raise DataError(f"line {lineno}: need >=2 columns with labels")
            elif len(values) != width:
                raise DataError(
                    f"line {lineno}: ragged row, expected {width} cells, got {len(values)}"
                )
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    arr = np.asarray(rows, dtype=float)
    labels = None
    if has_labels:
        raw = arr[:, -1]
        if not np.all(raw == np.round(raw)):
            bad = int(np.argmax(raw != np.round(raw)))
            raise DataError(f"non-integer label in data row {bad + 1}")
        labels = raw.astype(int)
        arr = arr[:, :-1]
    return DataMatrix(arr, labels)


def save_csv(path, points):
    """Write an (N, D) array as a plain comma-separated file."""
    pts = np.asarray(points, dtype=float)
    with open(path, "w", newline="") as fh:
        for row in pts:
            fh.write(",".join(repr(v) for v in row) + "\n")


def read_labels(path) -> np.ndarray:
    """Read a single-column integer label file (any ids, header optional)."""
    dm = load_csv(path, has_labels=False)
    if dm.d != 1:
        raise DataError(f"{path}: expected a single label column, got {dm.d}")
    raw = dm.points[:, 0]
    if not np.all(raw == np.round(raw)):
        raise DataError(f"{path}: labels must be integers")
    return raw.astype(int)


def save_labels(path, labels):
    with open(path, "w", newline="") as fh:
        for v in np.asarray(labels, dtype=int):
            fh.write(f"{int(v)}\n")


def normalize_unit_rows(data: DataMatrix) -> DataMatrix:
    """Rescale every sample to unit Euclidean norm. Zero rows are an error."""
    norms = np.linalg.norm(data.points, axis=1)
    zero = np.where(norms == 0)[0]
    if zero.size:
        raise DataError(f"cannot normalize zero row at index {zero[0]}")
    return DataMatrix(data.points / norms[:, None], data.labels, data.image_shape)


def _spiral_arc_positions(n):
    """Arc-length-uniform spiral parameters t in [T_LO, T_HI].

    The spiral is r = a + b*t at angle phi = SCALE*t; equal arc spacing keeps
    the k-NN graph chain-like along each arm.
    """
    grid = np.linspace(SPIRAL_T_LO, SPIRAL_T_HI, 4096)
    r = SPIRAL_A + SPIRAL_B * grid
    # ds/dt = sqrt((dr/dt)^2 + (r * dphi/dt)^2)
    speed = np.sqrt(SPIRAL_B**2 + (SPIRAL_ANGLE_SCALE * r) ** 2)
    arc = np.concatenate([[0.0], np.cumsum((speed[1:] + speed[:-1]) / 2 * np.diff(grid))])
    targets = (np.arange(n) + 0.5) / n * arc[-1]
    return np.interp(targets, arc, grid)


def _generate_spirals(spec, rng):
    per = spec.points_per_cluster
    t = _spiral_arc_positions(per)
    r = SPIRAL_A + SPIRAL_B * t
    phi = SPIRAL_ANGLE_SCALE * t
    pts, labels = [], []
    for k in range(5):
        ang = phi + 2 * np.pi * k / 5
        xy = np.column_stack([r * np.cos(ang), r * np.sin(ang)])
        pts.append(xy)
        labels.append(np.full(per, k))
    points = np.vstack(pts) + rng.normal(0.0, spec.noise_sd, (5 * per, 2))
    return points, np.concatenate(labels)


def _generate_moons(spec, rng):
    per = spec.points_per_cluster
    t = np.linspace(0.0, np.pi, per)
    outer = np.column_stack([np.cos(t), np.sin(t)])
    inner = np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)])
    points = np.vstack([outer, inner]) + rng.normal(0.0, spec.noise_sd, (2 * per, 2))
    labels = np.concatenate([np.zeros(per, int), np.ones(per, int)])
    return points, labels


def generate_synthetic(spec: SyntheticSpec) -> DataMatrix:
    """Generate a labeled 2-D synthetic dataset, deterministic under seed.

    'spirals': five arc-length-sampled Archimedean spirals rotated by 72
    degrees, labeled 0..4. 'moons': two interleaved half-circles labeled 0/1.
    ``spec.outliers`` extra points are drawn uniformly over the bounding box
    inflated by 25% and labeled -1.
    """
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "spirals":
        points, labels = _generate_spirals(spec, rng)
    else:
        points, labels = _generate_moons(spec, rng)
    if spec.outliers:
        lo = points.min(axis=0)
        hi = points.max(axis=0)
        pad = 0.25 * (hi - lo)
        extra = rng.uniform(lo - pad / 2, hi + pad / 2, (spec.outliers, 2))
        points = np.vstack([points, extra])
        labels = np.concatenate([labels, np.full(spec.outliers, -1)])
    return DataMatrix(points, labels)


def bandwidth_knn_heuristic(data: DataMatrix, k: int = 7) -> float:
    """Mean distance from each point to its k-th nearest neighbor."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if data.n <= k:
        raise ValueError(f"need N > k, got N={data.n}, k={k}")
    tree = cKDTree(data.points)
    dist, _ = tree.query(data.points, k=k + 1)
    return float(np.mean(dist[:, k]))


def _pgm_tokens(raw, path):
    """Header tokens of a PGM stream, skipping '#' comments.

    Yields (token, end_offset) so the binary payload start is known.
    """
    i = 0
    n = len(raw)
    while i < n:
        c = raw[i : i + 1]
        if c in b" \t\r\n":
            i += 1
        elif c == b"#":
            while i < n and raw[i : i + 1] != b"\n":
                i += 1
        else:
            j = i
            while j < n and raw[j : j + 1] not in b" \t\r\n#":
                j += 1
            yield raw[i:j], j
            i = j
    raise DataError(f"{path}: truncated PGM header")


def load_pgm(path) -> DataMatrix:
    """Load a P2/P5 grayscale PGM as pixel feature rows.

    Each pixel becomes (row/height, col/width, intensity/maxval), all in
    [0, 1]; rows are emitted in row-major pixel order and ``image_shape``
    records (height, width).
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    toks = _pgm_tokens(raw, path)
    magic, _ = next(toks)
    if magic not in (b"P2", b"P5"):
        raise DataError(f"{path}: unsupported magic {magic.decode('ascii', 'replace')!r}")
    try:
        width, _ = next(toks)
        height, _ = next(toks)
        maxval, end = next(toks)
        width, height, maxval = int(width), int(height), int(maxval)
    except (StopIteration, ValueError):
        raise DataError(f"{path}: malformed PGM header") from None
    if width <= 0 or height <= 0 or not 0 < maxval <= 65535:
        raise DataError(f"{path}: bad PGM dimensions or maxval")
    count = width * height
    if magic == b"P5":
        payload = raw[end + 1 :]  # single whitespace byte after maxval
        dtype = ">u2" if maxval > 255 else np.uint8
        itemsize = 2 if maxval > 255 else 1
        if len(payload) < count * itemsize:
            raise DataError(f"{path}: truncated PGM payload")
        pixels = np.frombuffer(payload[: count * itemsize], dtype=dtype).astype(float)
    else:
        values = []
        for tok, _ in _pgm_tokens(raw[end:] + b"\n#", path):
            if tok == b"#":
                break
            values.append(tok)
            if len(values) == count:
                break
        if len(values) < count:
            raise DataError(f"{path}: truncated PGM payload")
        try:
            pixels = np.array([int(v) for v in values], dtype=float)
        except ValueError:
            raise DataError(f"{path}: non-numeric PGM pixel") from None
    if pixels.max(initial=0) > maxval:
        raise DataError(f"{path}: pixel value exceeds maxval")
    rows, cols = np.divmod(np.arange(count), width)
    feats = np.column_stack(
        [rows / height, cols / width, pixels / maxval]
    )
    return DataMatrix(feats, image_shape=(height, width))


def save_pgm(path, image, maxval=255):
    """Write a 2-D integer array as a binary (P5) PGM."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise DataError("PGM image must be 2-D")
    if img.min(initial=0) < 0 or img.max(initial=0) > maxval:
        raise DataError("pixel values outside [0, maxval]")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(img.astype(np.uint8 if maxval <= 255 else ">u2").tobytes())
