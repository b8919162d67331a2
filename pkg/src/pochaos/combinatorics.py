"""Exact integer combinatorics for the expansion coefficients.

Everything here is exact (Python ints): counts of pair partitions, the
alternating block sums appearing in the second-order expansion term, and
signed Stirling numbers of the first kind driving the tensorized moment
expansion of U-statistics.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np


def pair_count(k):
    """Number of partitions of a k-set into unordered pairs; 1 for k = 0."""
    if k < 0 or k % 2 != 0:
        raise ValueError("k must be even and nonnegative")
    half = k // 2
    return math.factorial(k) // (2**half * math.factorial(half))


def _even_compositions(m):
    """Ordered tuples of even parts >= 2 summing to m (m even)."""
    if m == 0:
        yield ()
        return
    for first in range(2, m + 1, 2):
        for rest in _even_compositions(m - first):
            yield (first,) + rest


def alternating_sum(q):
    """Signed sum over ordered splittings of [q] into even blocks, each
    block weighted by its pair-partition count, with sign (-1)^(r+1) for r
    blocks. Equals (-1)^(q/2+1) * pair_count(q)."""
    if q < 2 or q % 2 != 0:
        raise ValueError("q must be even and >= 2")
    total = 0
    for comp in _even_compositions(q):
        r = len(comp)
        term = (-1) ** (r + 1)
        rem = q
        for c in comp:
            term *= math.comb(rem, c) * pair_count(c)
            rem -= c
        total += term
    return total


def pair_refinement_sum(m):
    """Signed sum over ordered even-block splittings of [m] with sign
    (-1)^r, blocks weighted by pair-partition counts. Equals
    (-1)^(m/2) * pair_count(m)."""
    if m < 2 or m % 2 != 0:
        raise ValueError("m must be even and >= 2")
    total = 0
    for comp in _even_compositions(m):
        r = len(comp)
        term = (-1) ** r
        rem = m
        for c in comp:
            term *= math.comb(rem, c) * pair_count(c)
            rem -= c
        total += term
    return total


@dataclass(frozen=True)
class PairPartitionConstants:
    """Table of pair-partition counts and alternating sums up to q_max."""

    q_max: int
    pair_counts: dict
    alternating: dict

    @classmethod
    def build(cls, q_max):
        if q_max < 2:
            raise ValueError("q_max must be >= 2")
        pc = {k: pair_count(k) for k in range(0, q_max + 1, 2)}
        alt = {q: alternating_sum(q) for q in range(2, q_max + 1, 2)}
        return cls(q_max=q_max, pair_counts=pc, alternating=alt)


def pair_constants(q_max):
    return PairPartitionConstants.build(q_max)


@dataclass(frozen=True)
class StirlingTable:
    """Signed Stirling numbers of the first kind, falling-factorial
    convention: product over i < p of (x - i) has coefficient s(p, m) on
    x^m."""

    max_p: int
    table: tuple

    @classmethod
    def build(cls, max_p):
        if max_p < 0:
            raise ValueError("max_p must be nonnegative")
        rows = [(1,)]
        for p in range(max_p):
            prev = rows[-1]
            row = []
            for m in range(p + 2):
                above = prev[m] if m <= p else 0
                left = prev[m - 1] if m >= 1 else 0
                row.append(left - p * above)
            rows.append(tuple(row))
        return cls(max_p=max_p, table=tuple(rows))

    def s(self, p, m):
        if not 0 <= p <= self.max_p:
            raise ValueError("p out of range")
        if m < 0 or m > p:
            return 0
        return self.table[p][m]


def stirling_first_kind(max_p):
    return StirlingTable.build(max_p)


def falling_factorial(n, p):
    out = 1
    for i in range(p):
        out *= n - i
    return out


def stirling_expand(points, F, q, table=None):
    """Expansion of the full tensorized moment of F (mean over all index
    tuples, repeats allowed) into inverse powers of the sample size.

    For each self-map a of {0..q-1} with image size p, the injective mean
    of F composed with a is weighted by s(p, q-k) / falling_factorial(q, p)
    at order k. The order-0 term is the plain q-fold U-statistic; summing
    the q orders reproduces the tensor moment exactly, which is the
    correctness test.

    points: array (N, ...) of sample points; F: vectorized callable taking
    (..., q, *point_shape) and returning (...).
    """
    pts = np.asarray(points)
    n = pts.shape[0]
    if q < 1:
        raise ValueError("q must be >= 1")
    if n < q:
        raise ValueError("need at least q points")
    if table is None:
        table = StirlingTable.build(q)
    maps = np.array(list(itertools.product(range(q), repeat=q)), dtype=np.int64)
    image_sizes = np.array([len(set(m.tolist())) for m in maps])
    injections = np.array(list(itertools.permutations(range(n), q)), dtype=np.int64)
    composed = injections[:, maps]  # (n_inj, n_maps, q)
    vals = np.asarray(F(pts[composed]), dtype=float)
    if vals.shape != composed.shape[:2]:
        raise ValueError("F returned wrong shape")
    map_means = vals.mean(axis=0)  # (n_maps,)

    total = 0.0
    for k in range(q):
        order_k = 0.0
        for p in range(1, q + 1):
            sval = table.s(p, q - k)
            if sval == 0:
                continue
            sel = image_sizes == p
            if not sel.any():
                continue
            weight = sval / falling_factorial(q, p)
            order_k += weight * map_means[sel].sum()
        total += order_k / n**k
    return float(total)
