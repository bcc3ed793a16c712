import math

import numpy as np
import pytest

from mgce.oracles import (
    OracleLimitError,
    all_minima,
    brute_force_matching,
    brute_force_partition,
    codelength,
    finite_diff,
    set_partitions,
)


def test_bell_numbers():
    assert [sum(1 for _ in set_partitions(n)) for n in range(1, 7)] == [1, 2, 5, 15, 52, 203]


def test_codelength_single_module_is_visit_entropy():
    a = np.ones((3, 3)) - np.eye(3)
    assert codelength(a, [0, 0, 0]) == pytest.approx(math.log2(3))


def test_two_triangles_optimum():
    a = np.zeros((6, 6))
    a[:3, :3] = a[3:, 3:] = 1
    np.fill_diagonal(a, 0)
    labels, best = brute_force_partition(a)
    length, minima = all_minima(a)
    assert length == pytest.approx(best) and len(minima) == 1
    assert labels[0] == labels[1] == labels[2] != labels[3] == labels[4] == labels[5]


def test_limits_enforced():
    with pytest.raises(OracleLimitError):
        brute_force_partition(np.ones((9, 9)))
    with pytest.raises(OracleLimitError):
        brute_force_matching(list(range(7)), list(range(7)))


def test_matching_examples():
    assert brute_force_matching([0, 0, 1, 1], [0, 1, 0, 1]) == 0.5
    assert brute_force_matching([0, 1, 2], [0, 0, 0]) == pytest.approx(1 / 3)


def test_finite_diff_quadratic():
    p = {"w": np.array([1.0, -2.0])}
    g = finite_diff(lambda t: float(np.sum(t["w"] ** 2)), p)
    np.testing.assert_allclose(g["w"], [2.0, -4.0], atol=1e-8)
