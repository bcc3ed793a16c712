"""Hungarian-matched accuracy, class-count estimation and inference merging."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data import EmbeddingSet, Split
from .infomap import Partition

log = logging.getLogger(__name__)

MIN_CLUSTER_SIZE = 4


def hungarian_acc(y_true, y_pred) -> tuple[float, dict[int, int]]:
    """Accuracy under the best one-to-one cluster -> class matching.

    The contingency table is zero-padded to a square, so surplus clusters (or
    classes) are matched to dummies and count as misses.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.size == 0 or y_true.shape != y_pred.shape:
        raise ValueError("need equal-length, non-empty label arrays")
    classes, t = np.unique(y_true, return_inverse=True)
    clusters, p = np.unique(y_pred, return_inverse=True)
    size = max(len(classes), len(clusters))
    table = np.zeros((size, size), dtype=np.int64)
    np.add.at(table, (p, t), 1)
    rows, cols = linear_sum_assignment(table, maximize=True)
    hits = int(table[rows, cols].sum())
    matching = {
        int(clusters[r]): int(classes[c])
        for r, c in zip(rows, cols)
        if r < len(clusters) and c < len(classes)
    }
    return hits / y_true.size, matching


@dataclass
class AccReport:
    all_acc: float
    old_acc: float
    new_acc: float
    k_est: int
    matching: dict[int, int] = field(default_factory=dict)

    def as_row(self) -> dict:
        return {
            "all_acc": self.all_acc,
            "old_acc": self.old_acc,
            "new_acc": self.new_acc,
            "k_est": self.k_est,
        }


def gcd_acc(data: EmbeddingSet, part: Partition) -> AccReport:
    """All/Old/New accuracy on the unlabeled rows under one joint matching."""
    if not data.has_ground_truth:
        raise ValueError("missing ground truth on the unlabeled split")
    unl = ~data.labeled_mask
    if not unl.any():
        raise ValueError("no unlabeled rows to evaluate")
    y_true = data.targets[unl]
    y_pred = part.assignment[unl]
    acc, matching = hungarian_acc(y_true, y_pred)
    mapped = np.array([matching.get(int(c), -1) for c in y_pred])
    hit = mapped == y_true
    old = data.split_mask(Split.UNLABELED_KNOWN)[unl]
    new = data.split_mask(Split.UNLABELED_NOVEL)[unl]
    old_acc = float(hit[old].mean()) if old.any() else 0.0
    new_acc = float(hit[new].mean()) if new.any() else 0.0
    return AccReport(acc, old_acc, new_acc, estimate_k(part), matching)


def filter_small(part: Partition, min_size: int = MIN_CLUSTER_SIZE) -> int:
    """Number of communities with at least ``min_size`` members."""
    return int((part.sizes >= min_size).sum())


def estimate_k(part: Partition) -> int:
    return filter_small(part, MIN_CLUSTER_SIZE)


def count_error_rate(k_true: int, k_est: int) -> float:
    """Relative class-count error ``|K_true - K_est| / K_true``."""
    if k_true < 1:
        raise ValueError("k_true must be positive")
    return abs(k_true - k_est) / k_true


def merge_to_k(part: Partition, features: np.ndarray, k: int) -> Partition:
    """Merge the smallest cluster into its most similar (centroid cosine) one until k remain."""
    if k < 1:
        raise ValueError("k must be >= 1")
    labels = part.assignment.copy()
    if part.k < k:
        log.warning("only %d clusters found, fewer than k=%d; leaving partition as-is", part.k, k)
        return Partition(labels)
    features = np.asarray(features, dtype=np.float64)
    ids = list(range(part.k))
    sums = {c: features[labels == c].sum(axis=0) for c in ids}
    sizes = {c: int((labels == c).sum()) for c in ids}
    while len(ids) > k:
        small = min(ids, key=lambda c: (sizes[c], c))
        cs = sums[small] / sizes[small]
        best, best_sim = None, -np.inf
        for c in ids:
            if c == small:
                continue
            other = sums[c] / sizes[c]
            denom = np.linalg.norm(cs) * np.linalg.norm(other)
            sim = cs @ other / denom if denom > 0 else -1.0
            if sim > best_sim:
                best, best_sim = c, sim
        labels[labels == small] = best
        sums[best] = sums[best] + sums.pop(small)
        sizes[best] += sizes.pop(small)
        ids.remove(small)
    return Partition.canonical(labels)
