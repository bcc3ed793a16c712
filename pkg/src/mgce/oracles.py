"""Brute-force reference implementations for the test suite.

Nothing here imports the production clustering, matching or gradient code;
each oracle recomputes its quantity from the definition.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

GRAPH_LIMIT = 8
MATCH_LIMIT = 6


class OracleLimitError(ValueError):
    pass


def set_partitions(n: int):
    """Yield restricted-growth strings for all set partitions of ``n`` items."""
    if n == 0:
        yield []
        return
    a = [0] * n

    def rec(i, top):
        if i == n:
            yield list(a)
            return
        for v in range(top + 2):
            a[i] = v
            yield from rec(i + 1, max(top, v))

    a[0] = 0
    yield from rec(1, 0)


def _entropy(p):
    p = np.asarray([x for x in p if x > 0], dtype=float)
    if p.size == 0:
        return 0.0
    p = p / p.sum()
    return float(-(p * np.log2(p)).sum())


def codelength(adj: np.ndarray, labels) -> float:
    """Map equation from its definition: index codebook plus module codebooks."""
    adj = np.asarray(adj, dtype=float)
    total = adj.sum()
    if total == 0:
        return 0.0
    visit = adj.sum(axis=1) / total
    labels = list(labels)
    mods = sorted(set(labels))
    exits, length = [], 0.0
    for m in mods:
        inside = np.array([lab == m for lab in labels])
        exit_m = adj[np.ix_(inside, ~inside)].sum() / total
        exits.append(exit_m)
    q = sum(exits)
    if q > 0:
        length += q * _entropy(exits)
    for m, exit_m in zip(mods, exits):
        inside = [i for i, lab in enumerate(labels) if lab == m]
        usage = exit_m + sum(visit[i] for i in inside)
        if usage > 0:
            length += usage * _entropy([exit_m] + [visit[i] for i in inside])
    return length


def brute_force_partition(adj: np.ndarray):
    """Exhaustive map-equation minimum for graphs of at most 8 nodes.

    Returns ``(labels, codelength)``; ties keep the first partition in
    restricted-growth enumeration order.
    """
    adj = np.asarray(adj, dtype=float)
    n = adj.shape[0]
    if n > GRAPH_LIMIT:
        raise OracleLimitError("oracle size limit")
    best, best_len = None, math.inf
    for labels in set_partitions(n):
        length = codelength(adj, labels)
        if length < best_len:
            best, best_len = labels, length
    return best, best_len


def all_minima(adj: np.ndarray, tol: float = 1e-9):
    """All partitions within ``tol`` bits of the optimum (for uniqueness checks)."""
    scored = [(codelength(adj, lab), lab) for lab in set_partitions(np.asarray(adj).shape[0])]
    lo = min(s for s, _ in scored)
    return lo, [lab for s, lab in scored if s <= lo + tol]


def brute_force_matching(y_true, y_pred) -> float:
    """Best accuracy over all injective cluster -> class maps."""
    y_true = list(y_true)
    y_pred = list(y_pred)
    if len(y_true) != len(y_pred) or not y_true:
        raise ValueError("need equal, non-empty label lists")
    classes = sorted(set(y_true))
    clusters = sorted(set(y_pred))
    if len(classes) > MATCH_LIMIT or len(clusters) > MATCH_LIMIT:
        raise OracleLimitError("oracle size limit")
    counts = {}
    for t, p in zip(y_true, y_pred):
        counts[(p, t)] = counts.get((p, t), 0) + 1
    # pad classes with dummies so every cluster can map somewhere
    targets = classes + [None] * len(clusters)
    best = 0
    for perm in itertools.permutations(targets, len(clusters)):
        hits = sum(counts.get((c, t), 0) for c, t in zip(clusters, perm) if t is not None)
        best = max(best, hits)
    return best / len(y_true)


def finite_diff(fn, params: dict, step: float = 1e-5) -> dict:
    """Central-difference gradient of scalar ``fn(params)`` w.r.t. every array."""
    grads = {}
    for name, arr in params.items():
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            up = fn(params)
            flat[i] = old - step
            down = fn(params)
            flat[i] = old
            if not (math.isfinite(up) and math.isfinite(down)):
                raise ValueError(f"non-finite probe at {name}[{i}]")
            gflat[i] = (up - down) / (2 * step)
        grads[name] = g
    return grads
