"""Two-level map equation and a deterministic Infomap-style optimizer.

Flow model: undirected random walk without teleportation, so node visit
rates are proportional to weighted degree and every undirected edge carries
``w / 2W`` flow in each direction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph import SymmetrizedGraph, build_graph, symmetrize

MIN_IMPROVEMENT = 1e-12


def plogp(p: float) -> float:
    return p * math.log2(p) if p > 0 else 0.0


@dataclass
class Partition:
    assignment: np.ndarray

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=np.int64)

    @classmethod
    def canonical(cls, labels) -> "Partition":
        """Relabel to dense ids in order of first appearance."""
        _, first, inv = np.unique(np.asarray(labels), return_index=True, return_inverse=True)
        rank = np.empty(len(first), dtype=np.int64)
        rank[np.argsort(first, kind="stable")] = np.arange(len(first))
        return cls(rank[inv.ravel()])

    @property
    def n(self) -> int:
        return len(self.assignment)

    @property
    def k(self) -> int:
        return int(self.assignment.max()) + 1 if self.n else 0

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)

    @property
    def members(self) -> list[np.ndarray]:
        order = np.argsort(self.assignment, kind="stable")
        return np.split(order, np.cumsum(self.sizes)[:-1])


@dataclass
class FlowGraph:
    node_flow: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    edge_flow: np.ndarray  # per direction

    @classmethod
    def from_graph(cls, g: SymmetrizedGraph) -> "FlowGraph":
        if g.n == 0:
            raise ValueError("empty graph")
        deg = np.zeros(g.n)
        np.add.at(deg, g.src, g.weight)
        np.add.at(deg, g.dst, g.weight)
        total = deg.sum()
        if total <= 0:
            return cls(np.zeros(g.n), g.src, g.dst, np.zeros(len(g.weight)))
        return cls(deg / total, g.src, g.dst, g.weight / total)

    @property
    def n(self) -> int:
        return len(self.node_flow)


def map_equation(flow: FlowGraph, part: Partition) -> float:
    """Two-level codelength L(M) in bits."""
    if flow.n == 0:
        raise ValueError("empty graph")
    if part.n != flow.n:
        raise ValueError("partition does not cover the graph")
    a = part.assignment
    k = part.k
    mod_flow = np.bincount(a, weights=flow.node_flow, minlength=k)
    cross = a[flow.src] != a[flow.dst]
    mod_exit = np.bincount(a[flow.src[cross]], weights=flow.edge_flow[cross], minlength=k)
    mod_exit += np.bincount(a[flow.dst[cross]], weights=flow.edge_flow[cross], minlength=k)
    q = mod_exit.sum()
    return (
        plogp(q)
        - 2.0 * sum(plogp(x) for x in mod_exit)
        - sum(plogp(x) for x in flow.node_flow)
        + sum(plogp(x) for x in mod_exit + mod_flow)
    )


class _Level:
    """Local-moving state over one (possibly aggregated) graph."""

    def __init__(self, node_flow, node_exit, adj):
        self.node_flow = list(node_flow)
        self.node_exit = list(node_exit)
        self.adj = adj  # list of dict neighbor -> per-direction flow
        n = len(self.node_flow)
        self.mod = list(range(n))
        self.mod_flow = list(self.node_flow)
        self.mod_exit = list(self.node_exit)
        self.mod_size = [1] * n
        self.q = sum(self.mod_exit)

    def set_modules(self, mod):
        n = len(self.node_flow)
        self.mod = list(mod)
        self.mod_flow = [0.0] * n
        self.mod_exit = [0.0] * n
        self.mod_size = [0] * n
        for a in range(n):
            m = self.mod[a]
            self.mod_flow[m] += self.node_flow[a]
            self.mod_size[m] += 1
            for b, f in self.adj[a].items():
                if self.mod[b] != m:
                    self.mod_exit[m] += f
        self.q = sum(self.mod_exit)

    def sweep(self, order) -> int:
        moves = 0
        mod, mod_flow, mod_exit, mod_size = self.mod, self.mod_flow, self.mod_exit, self.mod_size
        for a in order:
            if not self.adj[a]:
                continue
            old = mod[a]
            links: dict[int, float] = {}
            for b, f in self.adj[a].items():
                m = mod[b]
                links[m] = links.get(m, 0.0) + f
            fa, ea = self.node_flow[a], self.node_exit[a]
            to_old = links.pop(old, 0.0)
            ex_old = mod_exit[old] - ea + 2.0 * to_old
            fl_old = mod_flow[old] - fa
            base_old = -2.0 * plogp(mod_exit[old]) + plogp(mod_exit[old] + mod_flow[old])
            new_old = -2.0 * plogp(ex_old) + plogp(ex_old + fl_old)

            best, best_delta = old, -MIN_IMPROVEMENT
            cands = sorted(links.items())
            if mod_size[old] > 1:
                cands.append((-1, 0.0))
            for m, to_m in cands:
                if m >= 0:
                    ex_m, fl_m = mod_exit[m], mod_flow[m]
                else:
                    ex_m, fl_m = 0.0, 0.0
                ex_new = ex_m + ea - 2.0 * to_m
                q_new = self.q - mod_exit[old] + ex_old - ex_m + ex_new
                delta = (
                    plogp(q_new)
                    - plogp(self.q)
                    + new_old
                    - base_old
                    - 2.0 * plogp(ex_new)
                    + plogp(ex_new + fl_m + fa)
                    + 2.0 * plogp(ex_m)
                    - plogp(ex_m + fl_m)
                )
                if delta < best_delta:
                    best, best_delta = m, delta
            if best == old:
                continue
            if best < 0:
                best = mod_size.index(0)
                to_best = 0.0
            else:
                to_best = links[best]
            ex_best = mod_exit[best] + ea - 2.0 * to_best
            self.q += ex_old - mod_exit[old] + ex_best - mod_exit[best]
            mod_exit[old], mod_flow[old] = ex_old, fl_old
            mod_exit[best] = ex_best
            mod_flow[best] += fa
            mod_size[old] -= 1
            mod_size[best] += 1
            mod[a] = best
            moves += 1
        return moves

    def optimize(self, order, max_sweeps=200) -> int:
        total = 0
        for _ in range(max_sweeps):
            moved = self.sweep(order)
            total += moved
            if not moved:
                break
        return total

    def aggregate(self):
        """Return (level over modules, node -> module index map)."""
        ids = sorted(set(self.mod))
        index = {m: i for i, m in enumerate(ids)}
        k = len(ids)
        flow = [0.0] * k
        adj: list[dict[int, float]] = [dict() for _ in range(k)]
        for a, m in enumerate(self.mod):
            i = index[m]
            flow[i] += self.node_flow[a]
            for b, f in self.adj[a].items():
                j = index[self.mod[b]]
                if i != j:
                    adj[i][j] = adj[i].get(j, 0.0) + f
        exit_ = [sum(d.values()) for d in adj]
        node_map = [index[m] for m in self.mod]
        return _Level(flow, exit_, adj), node_map


def _base_level(flow: FlowGraph) -> _Level:
    n = flow.n
    adj: list[dict[int, float]] = [dict() for _ in range(n)]
    for i, j, f in zip(flow.src.tolist(), flow.dst.tolist(), flow.edge_flow.tolist()):
        if i == j or f <= 0:
            continue
        adj[i][j] = adj[i].get(j, 0.0) + f
        adj[j][i] = adj[j].get(i, 0.0) + f
    exit_ = [sum(d.values()) for d in adj]
    return _Level(flow.node_flow.tolist(), exit_, adj)


def _dissolve(flow: FlowGraph, base: _Level, assignment) -> list:
    """Escape single-node minima by splitting whole modules among their neighbors.

    Each module in turn has every member sent to the neighboring module it
    links to most strongly; the change is kept when the codelength drops.
    """
    current = list(assignment)
    best_len = map_equation(flow, Partition.canonical(current))
    for m in sorted(set(current)):
        trial = list(current)
        members = [a for a in range(len(current)) if current[a] == m]
        ok = True
        for a in members:
            links: dict[int, float] = {}
            for b, f in base.adj[a].items():
                if current[b] != m:
                    links[current[b]] = links.get(current[b], 0.0) + f
            if not links:
                ok = False
                break
            trial[a] = max(sorted(links), key=lambda c: links[c])
        if not ok:
            continue
        length = map_equation(flow, Partition.canonical(trial))
        if length < best_len - MIN_IMPROVEMENT:
            current, best_len = trial, length
    return current


def _one_trial(flow: FlowGraph, order_of) -> np.ndarray:
    """Local moving + aggregation, alternated with single-node fine-tuning."""
    n = flow.n
    base = _base_level(flow)
    assignment = list(range(n))
    best_len = math.inf
    for _ in range(50):
        # coarse phase: repeated local moving on aggregated graphs
        level = _base_level(flow)
        level.set_modules(assignment)
        level_map = list(range(n))
        level, node_map = level.aggregate()
        level_map = [node_map[m] for m in level_map]
        while True:
            moved = level.optimize(order_of(len(level.node_flow)))
            if not moved:
                break
            level, node_map = level.aggregate()
            level_map = [node_map[m] for m in level_map]
        assignment = level_map
        # fine phase: single-node moves on the original graph
        base.set_modules(assignment)
        base.optimize(order_of(n))
        assignment = _dissolve(flow, base, base.mod)
        base.set_modules(assignment)
        base.optimize(order_of(n))
        assignment = list(base.mod)
        length = map_equation(flow, Partition.canonical(assignment))
        if length >= best_len - MIN_IMPROVEMENT:
            break
        best_len = length
    return np.asarray(assignment)


def detect_communities(g: SymmetrizedGraph, seed: int = 0, trials: int = 3) -> Partition:
    """Minimize the two-level map equation over partitions of ``g``.

    The first trial sweeps nodes in id order; further trials use orders drawn
    from ``seed``. The lowest-codelength result wins, earlier trials on ties.
    """
    if g.n < 1:
        raise ValueError("graph must have at least one node")
    flow = FlowGraph.from_graph(g)
    if not np.any(flow.edge_flow > 0):
        return Partition(np.arange(g.n))
    rng = np.random.default_rng(seed)
    best, best_len = None, math.inf
    for t in range(max(1, trials)):
        if t == 0:
            order_of = lambda m: range(m)  # noqa: E731
        else:
            order_of = lambda m: rng.permutation(m).tolist()  # noqa: E731
        part = Partition.canonical(_one_trial(flow, order_of))
        length = map_equation(flow, part)
        if length < best_len - MIN_IMPROVEMENT:
            best, best_len = part, length
    return best


def semi_infomap(
    features: np.ndarray,
    labels: np.ndarray,
    knn: int,
    delta: float,
    seed: int = 0,
    trials: int = 3,
) -> Partition:
    """Constrained graph -> max-symmetrized -> map-equation communities.

    ``labels`` holds the class id of labeled rows and -1 for unlabeled rows.
    """
    g = symmetrize(build_graph(features, labels, knn, delta))
    return detect_communities(g, seed=seed, trials=trials)
