"""Coarse-to-fine adaptive choice of the neighborhood size k_nn.

Candidates are scored by clustering accuracy on the labeled rows; the fine
stage additionally penalises a wrong number of labeled-row communities.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .data import EmbeddingSet, gcd_counts
from .evaluation import hungarian_acc
from .infomap import semi_infomap

COARSE = tuple(2**e for e in range(2, 10))
LARGE_INTERVAL = 200


class KnnSearchError(ValueError):
    pass


def err_acc(acc: float, k_true: int, k_est: int) -> float:
    """Accuracy scaled by ``1 - |k_true - k_est| / k_est``; may go negative."""
    if k_est < 1:
        raise KnnSearchError("k_est must be >= 1")
    return acc * (1.0 - abs(k_true - k_est) / k_est)


@dataclass
class Candidate:
    k: int
    acc: float
    k_est: int = 0
    err_rate: float = 0.0
    err_acc: float = 0.0


@dataclass
class KnnSearchReport:
    coarse_results: list[Candidate] = field(default_factory=list)
    fine_results: list[Candidate] = field(default_factory=list)
    chosen: int = 0

    def rows(self):
        for stage, cands in (("coarse", self.coarse_results), ("fine", self.fine_results)):
            for c in cands:
                yield {
                    "k": c.k,
                    "acc": repr(c.acc),
                    "k_est": c.k_est,
                    "err_rate": repr(c.err_rate),
                    "err_acc": repr(c.err_acc),
                    "stage": stage,
                }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(
                fh, ["k", "acc", "k_est", "err_rate", "err_acc", "stage"], lineterminator="\n"
            )
            w.writeheader()
            w.writerows(self.rows())


def _argmax_smaller_k(cands, key):
    best = None
    for c in cands:
        if best is None or key(c) > key(best) or (key(c) == key(best) and c.k < best.k):
            best = c
    return best


def _evaluate(data: EmbeddingSet, features, k, delta, seed) -> Candidate:
    labels = data.labels
    lab = data.labeled_mask
    part = semi_infomap(features, labels, k, delta, seed=seed)
    acc, _ = hungarian_acc(labels[lab], part.assignment[lab])
    k_est = len(np.unique(part.assignment[lab]))
    return Candidate(k, acc, k_est)


def coarse_candidates(n: int) -> list[int]:
    return [k for k in COARSE if 1 <= k <= n - 1]


def coarse_search(data: EmbeddingSet, features, delta: float, seed: int = 0):
    """Return ``(k_coarse, rows)``; ties in accuracy go to the smaller k."""
    n = len(data)
    if n < 5:
        raise KnnSearchError("adaptive k_nn search needs at least 5 samples")
    if not data.labeled_mask.any():
        raise KnnSearchError("adaptive k_nn search needs labeled samples")
    cands = coarse_candidates(n)
    if not cands:
        raise KnnSearchError("no valid coarse candidate")
    rows = [_evaluate(data, features, k, delta, seed) for k in cands]
    return _argmax_smaller_k(rows, lambda c: c.acc).k, rows


def fine_candidates(k_coarse: int, n: int) -> list[int]:
    """Grid between the neighboring coarse values, endpoints and k_coarse included."""
    i = COARSE.index(k_coarse) if k_coarse in COARSE else None
    lo = COARSE[i - 1] if i is not None and i > 0 else k_coarse
    hi = COARSE[i + 1] if i is not None and i + 1 < len(COARSE) else k_coarse
    lo, hi = max(1, lo), min(n - 1, hi)
    step = 50 if hi - lo >= LARGE_INTERVAL else 10
    cands = list(range(lo, hi, step)) + [hi, k_coarse]
    return sorted({c for c in cands if 1 <= c <= n - 1})


def fine_search(data: EmbeddingSet, features, delta: float, seed: int, k_coarse: int,
                coarse_rows=()) -> KnnSearchReport:
    k_true = gcd_counts(data)[2]
    report = KnnSearchReport(coarse_results=list(coarse_rows))
    for k in fine_candidates(k_coarse, len(data)):
        c = _evaluate(data, features, k, delta, seed)
        c.err_rate = abs(k_true - c.k_est) / c.k_est
        c.err_acc = err_acc(c.acc, k_true, c.k_est)
        report.fine_results.append(c)
    report.chosen = choose_from_report(report.fine_results)
    return report


def choose_from_report(fine_rows) -> int:
    return _argmax_smaller_k(fine_rows, lambda c: c.err_acc).k


def select_knn(data: EmbeddingSet, features, delta: float, seed: int = 0) -> KnnSearchReport:
    k_coarse, rows = coarse_search(data, features, delta, seed)
    return fine_search(data, features, delta, seed, k_coarse, rows)
