"""Similarity graphs over feature vectors and their Laplacians."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse

from .data import Dataset
from .errors import SSGLError
from .fileio import atomic_write, format_real

METHODS = ("knn", "epsilon", "full")
KERNELS = ("rbf", "cosine")
LAPLACIANS = ("unnormalized", "symmetric-normalized")

# rows of the pairwise distance matrix computed per block
_BLOCK = 256


@dataclass(frozen=True)
class GraphConfig:
    method: str = "knn"
    k: int | None = 10
    epsilon: float | None = None
    kernel: str = "rbf"
    sigma: float | str = "auto"
    standardize: bool = False

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise SSGLError(f"unknown graph method {self.method!r}")
        if self.kernel not in KERNELS:
            raise SSGLError(f"unknown kernel {self.kernel!r}")
        if self.method == "knn" and (self.k is None or int(self.k) != self.k or self.k < 1):
            raise SSGLError("knn graph needs a positive integer k")
        if self.method == "epsilon" and (
            self.epsilon is None or not math.isfinite(self.epsilon) or self.epsilon <= 0
        ):
            raise SSGLError("epsilon graph needs epsilon > 0")
        if self.kernel == "rbf" and self.sigma != "auto":
            if not isinstance(self.sigma, (int, float)) or not math.isfinite(self.sigma) or self.sigma <= 0:
                raise SSGLError("sigma must be > 0 or 'auto'")

    def param(self) -> str:
        if self.method == "knn":
            return str(self.k)
        if self.method == "epsilon":
            return format_real(self.epsilon)
        return "-"


@dataclass(frozen=True)
class SimilarityGraph:
    """Undirected weighted graph; each edge stored once with i < j."""

    n: int
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray
    config: GraphConfig | None = None
    sigma: float | None = None

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows, dtype=np.int64).ravel()
        cols = np.asarray(self.cols, dtype=np.int64).ravel()
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if not rows.size == cols.size == w.size:
            raise SSGLError("edge arrays differ in length")
        if rows.size:
            if np.any(rows == cols):
                raise SSGLError("self-loop")
            if np.any(rows > cols):
                raise SSGLError("edges must satisfy i < j")
            if rows.min() < 0 or cols.max() >= self.n:
                raise SSGLError("edge index out of range")
            if not np.all(np.isfinite(w)) or np.any(w <= 0) or np.any(w > 1):
                raise SSGLError("edge weights must lie in (0, 1]")
            order = np.lexsort((cols, rows))
            rows, cols, w = rows[order], cols[order], w[order]
            dup = (np.diff(rows) == 0) & (np.diff(cols) == 0)
            if np.any(dup):
                at = int(np.argmax(dup))
                raise SSGLError(f"duplicate edge ({rows[at]}, {cols[at]})")
        for arr in (rows, cols, w):
            arr.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "weights", w)

    @property
    def num_edges(self) -> int:
        return int(self.rows.size)

    def edges(self) -> dict[tuple[int, int], float]:
        return {(int(i), int(j)): float(w) for i, j, w in zip(self.rows, self.cols, self.weights)}

    def weight_matrix(self) -> sparse.csr_matrix:
        w = sparse.coo_matrix((self.weights, (self.rows, self.cols)), shape=(self.n, self.n))
        return (w + w.T).tocsr()

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n)
        np.add.at(deg, self.rows, self.weights)
        np.add.at(deg, self.cols, self.weights)
        return deg

    def scaled(self, factor: float) -> SimilarityGraph:
        return SimilarityGraph(self.n, self.rows, self.cols, self.weights * factor, self.config, self.sigma)

    def permuted(self, perm: np.ndarray) -> SimilarityGraph:
        """Graph with node i relabeled as perm[i]."""
        perm = np.asarray(perm)
        a, b = perm[self.rows], perm[self.cols]
        return SimilarityGraph(self.n, np.minimum(a, b), np.maximum(a, b), self.weights, self.config, self.sigma)


@dataclass(frozen=True)
class Laplacian:
    kind: str
    matrix: sparse.csr_matrix


def _check_pair(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise SSGLError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise SSGLError("non-finite input")
    return x, y


def rbf_similarity(x, y, sigma: float) -> float:
    x, y = _check_pair(x, y)
    if not sigma > 0:
        raise SSGLError("sigma must be > 0")
    d2 = float(np.sum((x - y) ** 2))
    return math.exp(-d2 / (2.0 * sigma * sigma))


def cosine_similarity(x, y) -> float:
    """Cosine of the angle, clipped below at 0; a zero vector gives 0."""
    x, y = _check_pair(x, y)
    nx, ny = float(np.linalg.norm(x)), float(np.linalg.norm(y))
    if nx == 0.0 or ny == 0.0:
        return 0.0
    return min(1.0, max(0.0, float(x @ y) / (nx * ny)))


def standardized(features: np.ndarray) -> np.ndarray:
    """Per-dimension z-scores; constant dimensions become 0."""
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    safe = np.where(std > 0, std, 1.0)
    return np.where(std > 0, (features - mean) / safe, 0.0)


def _distance_rows(x: np.ndarray, start: int, stop: int) -> np.ndarray:
    # direct differences rather than the Gram-matrix trick: exact zeros on
    # the diagonal and no cancellation error
    diff = x[start:stop, None, :] - x[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def pairwise_distances(x: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    out = np.empty((n, n))
    for start in range(0, n, _BLOCK):
        out[start:start + _BLOCK] = _distance_rows(x, start, min(n, start + _BLOCK))
    return out


def _median_from_distances(dist: np.ndarray) -> float:
    n = dist.shape[0]
    if n < 2:
        raise SSGLError("median sigma needs at least 2 samples")
    iu = np.triu_indices(n, k=1)
    med = float(np.median(dist[iu]))
    if not np.any(dist[iu] > 0):
        raise SSGLError("degenerate dataset: all pairwise distances are zero")
    return med


def median_sigma(dataset: Dataset | np.ndarray) -> float:
    """Median of all pairwise Euclidean distances (mean of the middle two for even counts)."""
    x = dataset.features if isinstance(dataset, Dataset) else np.asarray(dataset, dtype=np.float64)
    return _median_from_distances(pairwise_distances(x))


def _cosine_matrix(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = x / safe[:, None]
    sim = unit @ unit.T
    sim[norms == 0, :] = 0.0
    sim[:, norms == 0] = 0.0
    return np.clip(sim, 0.0, 1.0)


def build_graph(dataset: Dataset | np.ndarray, config: GraphConfig) -> SimilarityGraph:
    x = dataset.features if isinstance(dataset, Dataset) else np.asarray(dataset, dtype=np.float64)
    n = x.shape[0]
    if config.method == "knn" and config.k >= n:
        raise SSGLError(f"knn graph requires k < n (k={config.k}, n={n})")
    if config.standardize:
        x = standardized(x)
    dist = pairwise_distances(x)

    if config.method == "knn":
        selected = np.zeros((n, n), dtype=bool)
        for i in range(n):
            row = dist[i].copy()
            row[i] = np.inf
            # stable sort keeps lower indices first among equal distances
            nearest = np.argsort(row, kind="stable")[: config.k]
            selected[i, nearest] = True
        adjacency = selected | selected.T
    elif config.method == "epsilon":
        adjacency = dist <= config.epsilon
    else:
        adjacency = np.ones((n, n), dtype=bool)
    np.fill_diagonal(adjacency, False)
    rows, cols = np.nonzero(np.triu(adjacency, k=1))

    sigma = None
    if config.kernel == "rbf":
        sigma = _median_from_distances(dist) if config.sigma == "auto" else float(config.sigma)
        d = dist[rows, cols]
        weights = np.exp(-(d * d) / (2.0 * sigma * sigma))
    else:
        weights = _cosine_matrix(x)[rows, cols]
    keep = weights > 0
    return SimilarityGraph(n, rows[keep], cols[keep], weights[keep], config, sigma)


def laplacian(graph: SimilarityGraph, kind: str = "unnormalized") -> Laplacian:
    if kind not in LAPLACIANS:
        raise SSGLError(f"unknown Laplacian kind {kind!r}")
    w = graph.weight_matrix()
    deg = graph.degrees()
    if kind == "unnormalized":
        return Laplacian(kind, (sparse.diags(deg) - w).tocsr())
    inv_sqrt = np.zeros_like(deg)
    inv_sqrt[deg > 0] = 1.0 / np.sqrt(deg[deg > 0])
    scale = sparse.diags(inv_sqrt)
    return Laplacian(kind, (sparse.identity(graph.n) - scale @ w @ scale).tocsr())


# ---------------------------------------------------------- edge-list files

_HEADER = "# ssgl-graph v1"


def write_edgelist(graph: SimilarityGraph, path: str | Path) -> None:
    cfg = graph.config
    meta = [f"n={graph.n}"]
    if cfg is not None:
        meta += [f"method={cfg.method}", f"kernel={cfg.kernel}", f"param={cfg.param()}"]
        if cfg.kernel == "rbf":
            meta.append(f"sigma={format_real(graph.sigma) if graph.sigma else cfg.sigma}")
            meta.append(f"sigma_mode={'auto' if cfg.sigma == 'auto' else 'fixed'}")
        meta.append(f"standardize={int(cfg.standardize)}")
    with atomic_write(path) as fh:
        fh.write(_HEADER + "\n")
        fh.write("# " + " ".join(meta) + "\n")
        for i, j, w in zip(graph.rows, graph.cols, graph.weights):
            fh.write(f"{i} {j} {format_real(w)}\n")


def _config_from_meta(meta: dict[str, str]) -> tuple[GraphConfig | None, float | None]:
    if "method" not in meta or "kernel" not in meta:
        return None, None
    method, kernel, param = meta["method"], meta["kernel"], meta.get("param", "-")
    sigma_value = float(meta["sigma"]) if kernel == "rbf" and "sigma" in meta else None
    sigma: float | str = "auto"
    if kernel == "rbf" and meta.get("sigma_mode") == "fixed" and sigma_value:
        sigma = sigma_value
    cfg = GraphConfig(
        method=method,
        k=int(param) if method == "knn" else None,
        epsilon=float(param) if method == "epsilon" else None,
        kernel=kernel,
        sigma=sigma,
        standardize=meta.get("standardize", "0") == "1",
    )
    return cfg, sigma_value


def read_edgelist(path: str | Path) -> SimilarityGraph:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise SSGLError(f"cannot read {path}: {exc.strerror}") from exc
    if len(lines) < 2 or lines[0].strip() != _HEADER:
        raise SSGLError(f"{path}:1: expected '{_HEADER}'")
    if not lines[1].startswith("#"):
        raise SSGLError(f"{path}:2: missing metadata line")
    meta = dict(tok.split("=", 1) for tok in lines[1][1:].split() if "=" in tok)
    try:
        n = int(meta["n"])
        config, sigma = _config_from_meta(meta)
    except (KeyError, ValueError, SSGLError) as exc:
        raise SSGLError(f"{path}:2: malformed metadata ({exc})") from None
    rows, cols, weights = [], [], []
    seen: set[tuple[int, int]] = set()
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        parts = line.split()
        try:
            i, j, w = int(parts[0]), int(parts[1]), float(parts[2])
            if len(parts) != 3:
                raise ValueError
        except (ValueError, IndexError):
            raise SSGLError(f"{path}:{lineno}: malformed line {line!r}") from None
        if i == j:
            raise SSGLError(f"{path}:{lineno}: self-loop")
        if i > j:
            i, j = j, i
        if not (0 <= i and j < n):
            raise SSGLError(f"{path}:{lineno}: index out of range for n={n}")
        if (i, j) in seen:
            raise SSGLError(f"{path}:{lineno}: duplicate pair ({i}, {j})")
        if not (math.isfinite(w) and 0 < w <= 1):
            raise SSGLError(f"{path}:{lineno}: weight {w} outside (0, 1]")
        seen.add((i, j))
        rows.append(i)
        cols.append(j)
        weights.append(w)
    return SimilarityGraph(n, rows, cols, weights, config, sigma)
