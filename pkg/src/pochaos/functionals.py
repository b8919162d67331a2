"""Bounded path functionals.

A functional of arity q evaluates on q particle paths. Paths are exchanged
as arrays of states at the functional's declared query times, shaped
(..., n_times, d) with arbitrary leading batch axes; fn must broadcast over
them. Declared query times keep trajectory storage bounded; the declared
sup-norm bound feeds the error estimates.
"""

import itertools
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


@dataclass(frozen=True)
class PathFunctional:
    arity: int
    query_times: tuple
    fn: Callable
    bound: float
    name: str
    symmetric: bool = False

    def __post_init__(self):
        if self.arity < 1:
            raise ValueError("arity must be >= 1")
        qt = tuple(float(t) for t in self.query_times)
        if any(b <= a for a, b in zip(qt, qt[1:])):
            raise ValueError("query times must be strictly increasing")
        object.__setattr__(self, "query_times", qt)

    def __call__(self, *paths):
        if len(paths) != self.arity:
            raise ValueError(f"{self.name} has arity {self.arity}, got {len(paths)} paths")
        return self.fn(*paths)


@dataclass(frozen=True)
class ProductFunctional(PathFunctional):
    """Symmetrized tensor product of arity-1 functionals; keeps its parts so
    U-statistics can use power sums instead of pair enumeration."""

    parts: tuple = ()


def tensor_product(parts, name=None):
    parts = tuple(parts)
    if not parts:
        raise ValueError("need at least one part")
    qt = parts[0].query_times
    for p in parts:
        if p.arity != 1:
            raise ValueError("tensor parts must have arity 1")
        if p.query_times != qt:
            raise ValueError("tensor parts must share query times")
    q = len(parts)
    perms = list(itertools.permutations(range(q)))

    def fn(*paths):
        acc = 0.0
        for perm in perms:
            term = 1.0
            for slot, part_idx in enumerate(perm):
                term = term * parts[part_idx].fn(paths[slot])
            acc = acc + term
        return acc / len(perms)

    bound = 1.0
    for p in parts:
        bound *= p.bound
    label = name or "(" + "*".join(p.name for p in parts) + ")sym"
    return ProductFunctional(
        arity=q, query_times=qt, fn=fn, bound=bound, name=label, symmetric=True, parts=parts
    )


def symmetrize(F):
    """Average of F over argument permutations; declared-symmetric F is
    returned unchanged."""
    if F.symmetric or F.arity == 1:
        return F
    perms = list(itertools.permutations(range(F.arity)))

    def fn(*paths):
        acc = 0.0
        for perm in perms:
            acc = acc + F.fn(*(paths[i] for i in perm))
        return acc / len(perms)

    return PathFunctional(
        arity=F.arity,
        query_times=F.query_times,
        fn=fn,
        bound=F.bound,
        name=f"sym({F.name})",
        symmetric=True,
    )


@dataclass(frozen=True)
class CenteringRecord:
    """Bookkeeping for empirically centered functionals: the subtracted
    offset, its standard error, and the sample size used."""

    offset: float
    se: float
    n_sample: int


def shift_functional(f, offset):
    """Arity-1 functional minus a constant; the bound widens by |offset|."""
    if f.arity != 1:
        raise ValueError("shifting applies to arity-1 functionals")
    base_fn = f.fn
    off = float(offset)

    def fn(x):
        return base_fn(x) - off

    return PathFunctional(
        arity=1,
        query_times=f.query_times,
        fn=fn,
        bound=f.bound + abs(off),
        name=f.name + "~",
        symmetric=f.symmetric,
    )


def center_functional(f, marginal_paths):
    """Subtract the empirical marginal mean of an arity-1 functional.

    Returns (centered functional, record). The residual mean of the centered
    functional on the same sample is zero by construction; the record keeps
    the offset uncertainty for reports.
    """
    if f.arity != 1:
        raise ValueError("centering applies to arity-1 functionals")
    vals = np.asarray(f.fn(marginal_paths), dtype=float)
    offset = float(vals.mean())
    se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else float("nan")
    centered = shift_functional(f, offset)
    return centered, CenteringRecord(offset=offset, se=se, n_sample=int(vals.size))
