import itertools
import math

import numpy as np
import pytest

from pochaos.combinatorics import (
    StirlingTable,
    alternating_sum,
    falling_factorial,
    pair_constants,
    pair_count,
    pair_refinement_sum,
    stirling_expand,
    stirling_first_kind,
)


def brute_pair_partitions(k):
    """Enumerate all partitions of range(k) into unordered pairs."""
    if k == 0:
        return [()]
    out = []
    items = list(range(k))
    first = items[0]
    for j in items[1:]:
        rest = [i for i in items if i not in (first, j)]
        for sub in brute_pair_partitions_of(rest):
            out.append(((first, j),) + sub)
    return out


def brute_pair_partitions_of(items):
    if not items:
        return [()]
    out = []
    first = items[0]
    for j in items[1:]:
        rest = [i for i in items if i not in (first, j)]
        for sub in brute_pair_partitions_of(rest):
            out.append(((first, j),) + sub)
    return out


def test_pair_count_matches_enumeration():
    for k in range(0, 9, 2):
        assert pair_count(k) == len(brute_pair_partitions(k))


def test_pair_count_double_factorial():
    for k in range(2, 17, 2):
        dfact = math.prod(range(k - 1, 0, -2))
        assert pair_count(k) == dfact


def test_pair_count_rejects_odd_or_negative():
    with pytest.raises(ValueError):
        pair_count(3)
    with pytest.raises(ValueError):
        pair_count(-2)


def test_alternating_sum_closed_form():
    for q in range(2, 13, 2):
        assert alternating_sum(q) == (-1) ** (q // 2 + 1) * pair_count(q)
    with pytest.raises(ValueError):
        alternating_sum(3)
    with pytest.raises(ValueError):
        alternating_sum(0)


def test_pair_refinement_sum_closed_form():
    for m in range(2, 13, 2):
        assert pair_refinement_sum(m) == (-1) ** (m // 2) * pair_count(m)
    with pytest.raises(ValueError):
        pair_refinement_sum(5)


def test_pair_constants_table():
    pc = pair_constants(8)
    assert pc.pair_counts == {0: 1, 2: 1, 4: 3, 6: 15, 8: 105}
    assert pc.alternating == {q: alternating_sum(q) for q in (2, 4, 6, 8)}
    with pytest.raises(ValueError):
        pair_constants(1)


def test_stirling_polynomial_identity():
    # prod_{i<p} (x - i) must have coefficient s(p, m) on x^m, exactly
    table = stirling_first_kind(10)
    for p in range(0, 11):
        coeffs = [1]  # constant polynomial 1, ascending powers
        for i in range(p):
            shifted = [0] + coeffs
            coeffs = [s - i * c for s, c in zip(shifted, coeffs + [0])]
        for m in range(p + 1):
            assert table.s(p, m) == coeffs[m]


def test_stirling_out_of_range():
    table = StirlingTable.build(4)
    assert table.s(3, -1) == 0
    assert table.s(3, 4) == 0
    with pytest.raises(ValueError):
        table.s(5, 0)
    with pytest.raises(ValueError):
        StirlingTable.build(-1)


def test_stirling_row_sums():
    table = stirling_first_kind(9)
    for p in range(2, 10):
        # evaluating the falling factorial at x = 1 kills every p >= 2 row
        assert sum(table.s(p, m) for m in range(p + 1)) == 0
        # absolute values count permutations by cycle number
        assert sum(abs(table.s(p, m)) for m in range(p + 1)) == math.factorial(p)


def test_falling_factorial_exact():
    assert falling_factorial(7, 0) == 1
    assert falling_factorial(7, 3) == 7 * 6 * 5
    assert falling_factorial(3, 5) == 0


def brute_tuple_mean(points, F, q, injective=False):
    gen = itertools.permutations if injective else itertools.product
    args = (range(points.shape[0]), q) if injective else [range(points.shape[0])] * q
    vals = [F(points[np.array(idx)][None, None]) for idx in gen(*args)]
    return float(np.mean(vals))


def test_stirling_expand_reproduces_tensor_moment():
    rng = np.random.default_rng(21)
    for n, q in ((5, 2), (5, 3), (4, 4)):
        points = rng.standard_normal((n, 2))

        def F(tuples):
            # symmetric in the q slots, nonlinear in the coordinates
            t = np.asarray(tuples)
            return np.tanh(t[..., 0]).prod(axis=-1) + np.cos(t[..., 1].sum(axis=-1))

        expanded = stirling_expand(points, F, q)
        brute = brute_tuple_mean(points, F, q)
        assert abs(expanded - brute) < 1e-12


def test_stirling_expand_q2_closed_form():
    # tensor moment = (1 - 1/n) * injective mean + (1/n) * diagonal mean
    rng = np.random.default_rng(23)
    n, q = 6, 2
    points = rng.standard_normal((n, 2))

    def F(tuples):
        t = np.asarray(tuples)
        return np.exp(-(t[..., 0].sum(axis=-1) ** 2) / 4) + t[..., 1].prod(axis=-1)

    ustat = brute_tuple_mean(points, F, q, injective=True)
    diag = float(np.mean([F(points[np.array([i, i])][None, None]) for i in range(n)]))
    closed = (1 - 1 / n) * ustat + diag / n
    assert abs(stirling_expand(points, F, q) - closed) < 1e-12


def test_stirling_expand_q1_is_plain_mean():
    rng = np.random.default_rng(22)
    points = rng.standard_normal((6, 1))

    def F(tuples):
        return np.asarray(tuples)[..., 0, 0] ** 2

    assert abs(stirling_expand(points, F, 1) - np.mean(points[:, 0] ** 2)) < 1e-14


def test_stirling_expand_validation():
    points = np.zeros((2, 1))

    def F(tuples):
        return np.zeros(np.asarray(tuples).shape[:2])

    with pytest.raises(ValueError):
        stirling_expand(points, F, 0)
    with pytest.raises(ValueError):
        stirling_expand(points, F, 3)
