import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mgce.graph import (
    GraphError,
    SimilarityGraph,
    build_graph,
    constrained_weights,
    pairwise_similarity,
    s_max,
    similarity_matrix,
    symmetrize,
)


def test_pairwise_similarity_extremes():
    u = np.array([1.0, 0.0])
    assert pairwise_similarity(u, u) == pytest.approx(1.0)
    assert pairwise_similarity(u, np.array([0.0, 3.0])) == pytest.approx(0.5)
    assert pairwise_similarity(u, -u) == pytest.approx(0.0)
    with pytest.raises(GraphError, match="degenerate"):
        pairwise_similarity(u, np.zeros(2))


def test_s_max_excludes_self():
    x = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    assert s_max(x)[0] == pytest.approx(1.0)
    assert s_max(np.array([[1.0, 0.0], [0.0, 1.0]]))[0] == pytest.approx(0.5)


def test_s_max_direct_max():
    # s_12 = 0.8 and s_13 = 0.6 -> cos 0.6 and 0.2
    a = np.array([1.0, 0.0, 0.0])
    b = np.array([0.6, 0.8, 0.0])
    c = np.array([0.2, 0.0, np.sqrt(1 - 0.04)])
    sm = s_max(np.stack([a, b, c]))
    assert sm[0] == pytest.approx(0.8)


def test_must_link_weight_is_row_smax():
    x = np.array([[1.0, 0.1], [1.0, 0.3], [0.0, 1.0]])
    g = build_graph(x, np.array([0, 0, -1]), knn=1, delta=0.6)
    smax = s_max(x)
    nbr, w = g.rows[0]
    assert nbr.tolist() == [1]
    assert w[0] == pytest.approx(smax[0])


def test_delta_gate_and_cannot_link():
    s = np.array([[1.0, 0.55, 0.99], [0.55, 1.0, 0.5], [0.99, 0.5, 1.0]])
    a = constrained_weights(s, np.array([-1, 1, 0]), delta=0.6)
    assert a[0, 1] == 0.0  # unlabeled pair below delta
    assert a[0, 2] == pytest.approx(0.99)
    s2 = np.array([[1.0, 0.99], [0.99, 1.0]])
    a2 = constrained_weights(s2, np.array([0, 1]), delta=0.0)
    assert a2[0, 1] == 0.0 and a2[1, 0] == 0.0


def test_knn_out_of_range():
    x = np.random.default_rng(0).standard_normal((5, 3))
    for k in (0, 5):
        with pytest.raises(GraphError):
            build_graph(x, -np.ones(5, int), k, 0.5)


def test_ties_go_to_lower_id():
    x = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    g = build_graph(x, -np.ones(4, int), knn=2, delta=0.1)
    assert g.rows[3][0].tolist() == [0, 1]
    assert g.rows[0][0].tolist() == [1, 2]


def test_full_knn_reproduces_dense_weights():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((9, 4))
    labels = np.array([0, 0, 1, 1, -1, -1, -1, 0, -1])
    g = build_graph(x, labels, knn=8, delta=0.4)
    full = constrained_weights(similarity_matrix(x), labels, 0.4)
    np.testing.assert_allclose(g.dense(), full)


def test_symmetrize_max_rule_and_isolated():
    g = SimilarityGraph(3, [(np.array([1]), np.array([0.7])), (np.array([], int), np.array([])),
                            (np.array([], int), np.array([]))], 1, 0.5)
    sg = symmetrize(g)
    assert sg.n == 3
    assert sg.src.tolist() == [0] and sg.dst.tolist() == [1]
    assert sg.weight.tolist() == [0.7]
    assert sg.components().tolist() == [0, 0, 1]


def test_symmetric_input_unchanged():
    a = np.array([[0, 0.3, 0.2], [0.3, 0, 0.9], [0.2, 0.9, 0]])
    g = SimilarityGraph(3, [(np.nonzero(r)[0], r[np.nonzero(r)[0]]) for r in a], 2, 0.0)
    np.testing.assert_allclose(symmetrize(g).dense(), a)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 7), st.floats(0.0, 0.95))
def test_graph_row_invariants(seed, knn, delta):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((8, 3))
    labels = rng.integers(-1, 2, size=8)
    g = build_graph(x, labels, knn, delta)
    sym = symmetrize(g).dense()
    for i, (nbr, w) in enumerate(g.rows):
        assert len(nbr) <= knn
        assert i not in nbr.tolist()
        assert np.all((w > 0) & (w <= 1))
    lab = labels >= 0
    diff = lab[:, None] & lab[None, :] & (labels[:, None] != labels[None, :])
    assert np.all(g.dense()[diff] == 0) and np.all(sym[diff] == 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.9), st.floats(0.0, 0.09))
def test_raising_delta_never_adds_unlabeled_edges(seed, delta, bump):
    rng = np.random.default_rng(seed)
    s = similarity_matrix(rng.standard_normal((7, 3)))
    labels = rng.integers(-1, 2, size=7)
    lo = constrained_weights(s, labels, delta)
    hi = constrained_weights(s, labels, delta + bump)
    unl = (labels[:, None] < 0) | (labels[None, :] < 0)
    assert np.all((hi > 0)[unl] <= (lo > 0)[unl])


def test_edge_dump(tmp_path):
    x = np.random.default_rng(2).standard_normal((4, 3))
    g = build_graph(x, -np.ones(4, int), 2, 0.0)
    path = tmp_path / "g.csv"
    g.write_edges(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "src,dst,weight"
    assert len(lines) == 1 + sum(len(r[0]) for r in g.rows)
