"""Constrained kNN similarity graph used by Semi-Infomap.

Edge weights follow three rules: labeled pairs of the same class get the
row's maximum neighbor similarity (must-link), pairs that involve an
unlabeled sample keep their similarity when it clears ``delta``, and
everything else (including labeled pairs of different classes) is zero.
Each row then keeps only its ``knn`` heaviest edges.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


class GraphError(ValueError):
    pass


@dataclass
class SimilarityGraph:
    n: int
    # rows[i] = (neighbor ids, weights), sorted by decreasing weight
    rows: list[tuple[np.ndarray, np.ndarray]]
    knn: int
    delta: float

    def dense(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for i, (nbr, w) in enumerate(self.rows):
            a[i, nbr] = w
        return a

    def write_edges(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("src,dst,weight\n")
            for i, (nbr, w) in enumerate(self.rows):
                for j, x in zip(nbr, w):
                    fh.write(f"{i},{int(j)},{x:.9g}\n")


@dataclass
class SymmetrizedGraph:
    n: int
    # undirected edges with src < dst
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray

    @classmethod
    def from_dense(cls, a: np.ndarray) -> "SymmetrizedGraph":
        a = np.asarray(a, dtype=np.float64)
        iu, ju = np.triu_indices(a.shape[0], k=1)
        w = np.maximum(a[iu, ju], a[ju, iu])
        keep = w > 0
        return cls(a.shape[0], iu[keep], ju[keep], w[keep])

    def dense(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        a[self.src, self.dst] = self.weight
        a[self.dst, self.src] = self.weight
        return a

    def components(self) -> np.ndarray:
        from scipy.sparse import coo_matrix
        from scipy.sparse.csgraph import connected_components

        m = coo_matrix((self.weight, (self.src, self.dst)), shape=(self.n, self.n))
        return connected_components(m, directed=False)[1]


def normalize_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise GraphError("degenerate embedding")
    return x / norms


def pairwise_similarity(zi, zj) -> float:
    """Cosine similarity rescaled to [0, 1]."""
    u = normalize_rows(np.atleast_2d(zi))[0]
    v = normalize_rows(np.atleast_2d(zj))[0]
    return float(np.clip((u @ v + 1.0) / 2.0, 0.0, 1.0))


def similarity_matrix(features: np.ndarray) -> np.ndarray:
    u = normalize_rows(features)
    return np.clip((u @ u.T + 1.0) / 2.0, 0.0, 1.0)


def s_max(features: np.ndarray) -> np.ndarray:
    """Per-row maximum similarity to any *other* row."""
    s = similarity_matrix(features)
    if s.shape[0] < 2:
        raise GraphError("need at least two rows")
    np.fill_diagonal(s, -np.inf)
    return s.max(axis=1)


def constrained_weights(s: np.ndarray, labels: np.ndarray, delta: float) -> np.ndarray:
    """Full (pre-kNN) weight matrix from a similarity matrix and labels (-1 = unlabeled)."""
    n = s.shape[0]
    labels = np.asarray(labels)
    off = ~np.eye(n, dtype=bool)
    smax = np.where(off, s, -np.inf).max(axis=1)
    lab = labels >= 0
    both = lab[:, None] & lab[None, :]
    same = both & (labels[:, None] == labels[None, :])
    loose = ~both & (s > delta)
    a = np.where(same, smax[:, None], np.where(loose, s, 0.0))
    a[~off] = 0.0
    return a


# Hook for a swappable neighbor index: (weights, knn) -> per-row neighbor ids.
NeighborIndex = Callable[[np.ndarray, int], list[np.ndarray]]


def exact_topk(a: np.ndarray, knn: int) -> list[np.ndarray]:
    out = []
    for row in a:
        # stable sort on -w keeps lower ids first among ties
        order = np.argsort(-row, kind="stable")[:knn]
        out.append(order[row[order] > 0])
    return out


def build_graph(
    features: np.ndarray,
    labels: np.ndarray,
    knn: int,
    delta: float,
    index: Optional[NeighborIndex] = None,
) -> SimilarityGraph:
    """Build the constrained kNN graph.

    Parameters
    ----------
    features : (n, d) array
    labels : (n,) int array, class id for labeled rows and -1 otherwise
    knn : neighbors kept per row, ``1 <= knn < n``
    delta : similarity gate for edges touching unlabeled rows
    index : optional replacement for the exact brute-force top-k search
    """
    n = features.shape[0]
    if not (isinstance(knn, (int, np.integer)) and 1 <= knn < n):
        raise GraphError(f"knn must be in [1, {n - 1}], got {knn}")
    if not (0.0 <= delta < 1.0):
        raise GraphError("delta must be in [0, 1)")
    a = constrained_weights(similarity_matrix(features), labels, delta)
    nbrs = (index or exact_topk)(a, int(knn))
    rows = [(idx.astype(np.int64), a[i, idx]) for i, idx in enumerate(nbrs)]
    return SimilarityGraph(n, rows, int(knn), float(delta))


def symmetrize(g: SimilarityGraph) -> SymmetrizedGraph:
    """Undirected view with ``w(i, j) = max(a'_ij, a'_ji)``."""
    best: dict[tuple[int, int], float] = {}
    for i, (nbr, w) in enumerate(g.rows):
        for j, x in zip(nbr.tolist(), w.tolist()):
            key = (i, j) if i < j else (j, i)
            if x > best.get(key, 0.0):
                best[key] = x
    keys = sorted(best)
    src = np.array([k[0] for k in keys], dtype=np.int64)
    dst = np.array([k[1] for k in keys], dtype=np.int64)
    w = np.array([best[k] for k in keys], dtype=np.float64)
    return SymmetrizedGraph(g.n, src, dst, w)
