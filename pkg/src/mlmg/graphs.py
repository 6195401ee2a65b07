"""Instance-similarity and class co-occurrence graphs, normalized Laplacians."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist, pdist

from mlmg.errors import ConfigError
from mlmg.labels import FeatureMatrix, ObservedLabelMatrix

EPS_FLOOR_SCALE = 1e-8
_MEDIAN_SAMPLE = 200_000


@dataclass(frozen=True, eq=False)
class SparseSymmetricGraph:
    weights: sp.csr_matrix
    degrees: np.ndarray

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def from_weights(cls, w):
        w = sp.csr_matrix(w, dtype=float)
        w.setdiag(0.0)
        w.eliminate_zeros()
        w.sort_indices()
        if w.nnz and w.data.min() < 0:
            raise ConfigError("graph weights must be nonnegative")
        if w.nnz and abs(w - w.T).max() > 1e-12:
            raise ConfigError("graph weights must be symmetric")
        degrees = np.asarray(w.sum(axis=1)).ravel()
        return cls(w, degrees)


def _knn_order(dist, k):
    """Row-wise indices of the ``k`` smallest entries; ties go to lower index."""
    return np.argsort(dist, axis=1, kind="stable")[:, :k]


def _symmetrize_max(n, rows, cols, vals):
    w = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return w.maximum(w.T)


def _median_distance(points):
    n = points.shape[0]
    if n * (n - 1) // 2 <= _MEDIAN_SAMPLE:
        d = pdist(points)
    else:
        rng = np.random.default_rng(0)
        i = rng.integers(0, n, _MEDIAN_SAMPLE)
        j = rng.integers(0, n, _MEDIAN_SAMPLE)
        keep = i != j
        d = np.linalg.norm(points[i[keep]] - points[j[keep]], axis=1)
    med = float(np.median(d)) if d.size else 0.0
    return med if med > 0 else 1.0


def instance_similarity(x: FeatureMatrix, k_x=20, h=7) -> SparseSymmetricGraph:
    """Gaussian kNN graph with per-instance bandwidths.

    ``eps_i`` is the distance from instance ``i`` to its ``h``-th nearest
    neighbour, floored at ``1e-8`` times the median pairwise distance so that
    duplicated points do not divide by zero. Edges to the ``k_x`` nearest
    neighbours get weight ``exp(-|x_i - x_j|^2 / (eps_i eps_j))``; the directed
    kNN relation is symmetrized by taking the elementwise maximum.
    """
    pts = np.asarray(x.data if isinstance(x, FeatureMatrix) else x, dtype=float).T
    n = pts.shape[0]
    if not (1 <= k_x < n):
        raise ConfigError(f"k_x must satisfy 1 <= k_x < n, got k_x={k_x}, n={n}")
    if not (1 <= h < n):
        raise ConfigError(f"h must satisfy 1 <= h < n, got h={h}, n={n}")

    d2 = cdist(pts, pts, "sqeuclidean")
    np.fill_diagonal(d2, np.inf)
    order = _knn_order(d2, max(k_x, h))
    rows = np.arange(n)
    eps = np.sqrt(d2[rows, order[:, h - 1]])
    eps = np.maximum(eps, EPS_FLOOR_SCALE * _median_distance(pts))

    nbrs = order[:, :k_x]
    r = np.repeat(rows, k_x)
    c = nbrs.ravel()
    vals = np.exp(-d2[r, c] / (eps[r] * eps[c]))
    # exp underflow gives exact zeros; keep the pattern explicit anyway
    w = _symmetrize_max(n, r, c, vals)
    return SparseSymmetricGraph.from_weights(w)


def class_cooccurrence(y: ObservedLabelMatrix, k_c=10) -> SparseSymmetricGraph:
    """Cosine similarity between classes' positive-indicator rows.

    Only training columns contribute and MISSING counts as 0. Each row keeps
    its ``k_c`` largest positive similarities, then the result is max-symmetrized.
    """
    m = y.m
    if m < 2:
        raise ConfigError("class co-occurrence needs at least two classes")
    if k_c < 1:
        raise ConfigError(f"k_c must be positive, got {k_c}")
    ind = y.positive()[:, y.training_mask].astype(float)
    norms = np.linalg.norm(ind, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    sim = (ind @ ind.T) / np.outer(safe, safe)
    sim[norms == 0, :] = 0.0
    sim[:, norms == 0] = 0.0
    np.fill_diagonal(sim, 0.0)

    k = min(k_c, m - 1)
    order = _knn_order(-sim, k)
    r = np.repeat(np.arange(m), k)
    c = order.ravel()
    vals = sim[r, c]
    keep = vals > 0
    w = _symmetrize_max(m, r[keep], c[keep], vals[keep])
    return SparseSymmetricGraph.from_weights(w)


def normalized_laplacian(g: SparseSymmetricGraph) -> sp.csr_matrix:
    """``I - D^-1/2 W D^-1/2``; isolated nodes get an identity row."""
    d = g.degrees
    inv_sqrt = np.zeros_like(d)
    nz = d > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(d[nz])
    scale = sp.diags(inv_sqrt)
    lap = sp.identity(g.size, format="csr") - scale @ g.weights @ scale
    lap = sp.csr_matrix(lap)
    lap.sort_indices()
    return lap


def smoothness(z, lap) -> float:
    """``tr(Z L Z^T)`` for a column-indexed Laplacian ``L``."""
    z = np.asarray(z, dtype=float)
    return float(np.sum(z * (lap @ z.T).T))


def dump_graph(g: SparseSymmetricGraph, path) -> None:
    """Write the upper triangle as ``i j w`` lines."""
    upper = sp.triu(g.weights, k=1).tocoo()
    with open(path, "w") as fh:
        for i, j, w in sorted(zip(upper.row, upper.col, upper.data)):
            fh.write(f"{i} {j} {w:.17g}\n")
