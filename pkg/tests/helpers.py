"""Shared builders for micro-batches and small graphs used across the tests."""
import numpy as np

from mgce.infomap import Partition
from mgce.memory import init_memory
from mgce.model import Batch, Hyper, ModelParams


def micro_setup(seed, n=5, n_c=6, d_in=4, dim=3, n_classes=3, k_concepts=(3, 4, 2), labeled=3):
    """Random params, a batch with a concept part, and three small memories."""
    rng = np.random.default_rng(seed)
    params = ModelParams.init(d_in, dim, n_classes, seed=seed, hidden=4, expert_hidden=5)
    labels = -np.ones(n, dtype=np.int64)
    labels[:labeled] = rng.integers(0, n_classes, size=labeled)
    labels[1] = labels[0]  # guarantee one supervised positive pair
    x1 = rng.standard_normal((n, d_in))
    x2 = x1 + 0.3 * rng.standard_normal((n, d_in))
    xc = rng.standard_normal((n_c, d_in))
    memories, concepts = [], np.zeros((3, n_c), dtype=np.int64)
    for r, k in enumerate(k_concepts, start=1):
        protos = rng.standard_normal((k, dim))
        protos /= np.linalg.norm(protos, axis=1, keepdims=True)
        assign = np.arange(n_c) % k
        mem = init_memory(Partition(assign), rng.standard_normal((n_c, dim)), expert_id=r)
        mem.prototypes[:] = protos
        memories.append(mem)
        concepts[r - 1] = assign
    batch = Batch(x1, x2, labels, xc, concepts, np.arange(n_c))
    return params, batch, memories


def max_rel_error(analytic: dict, numeric: dict) -> float:
    worst = 0.0
    for k in numeric:
        a, b = analytic[k], numeric[k]
        denom = max(1e-6, float(np.max(np.abs(a))), float(np.max(np.abs(b))))
        worst = max(worst, float(np.max(np.abs(a - b))) / denom)
    return worst


def clique(n):
    a = np.ones((n, n)) - np.eye(n)
    return a


def block_diag(*blocks):
    n = sum(b.shape[0] for b in blocks)
    out = np.zeros((n, n))
    i = 0
    for b in blocks:
        m = b.shape[0]
        out[i:i + m, i:i + m] = b
        i += m
    return out


def barbell(m, bridge=0.1):
    a = block_diag(clique(m), clique(m))
    a[m - 1, m] = a[m, m - 1] = bridge
    return a


def chain(n, w=1.0):
    a = np.zeros((n, n))
    for i in range(n - 1):
        a[i, i + 1] = a[i + 1, i] = w
    return a


def random_graph(rng, n, p=0.5):
    a = np.triu(rng.random((n, n)) * (rng.random((n, n)) < p), 1)
    return a + a.T


def default_hyper(**kw):
    return Hyper(**kw)
