"""Test-function batteries for the builtin models.

Each battery fixes query times (0, T/2, T) and declares sup-norm bounds.
The pair battery mixes the three query times and both arguments so that
distributional differences in any coordinate show up somewhere.
"""

import math

import numpy as np

from .functionals import PathFunctional


def standard_query_times(horizon):
    return (0.0, horizon / 2.0, horizon)


def _v(x, k):
    # velocity coordinate at query slot k for 1-d models
    return np.asarray(x)[..., k, 0]


def pair_battery(horizon):
    """Eight bounded arity-2 functionals on 1-d paths, all with bound 1."""
    qt = standard_query_times(horizon)

    defs = [
        ("tanh_prod_T", lambda x, y: np.tanh(_v(x, 2) * _v(y, 2))),
        ("cos_mix_lag", lambda x, y: np.cos(_v(x, 2) - _v(y, 1))),
        ("gauss_pair_T", lambda x, y: np.exp(-_v(x, 2) ** 2 - _v(y, 2) ** 2)),
        (
            "pos_quadrant_T",
            lambda x, y: (_v(x, 2) > 0).astype(float) * (_v(y, 2) > 0).astype(float),
        ),
        ("tanh_self_cross", lambda x, y: np.tanh(_v(x, 0) * _v(x, 2)) * np.tanh(_v(y, 2))),
        ("sin_sum_half", lambda x, y: np.sin(_v(x, 1) + _v(y, 1))),
        ("cauchy_mix", lambda x, y: 1.0 / (1.0 + _v(x, 2) ** 2 + _v(y, 1) ** 2)),
        ("cos_sum_0", lambda x, y: np.cos(_v(x, 0) + _v(y, 0))),
    ]
    return [
        PathFunctional(arity=2, query_times=qt, fn=fn, bound=1.0, name=name)
        for name, fn in defs
    ]


def unary_battery(horizon):
    """Three bounded arity-1 functionals on 1-d paths."""
    qt = standard_query_times(horizon)
    defs = [
        ("tanh_T", lambda x: np.tanh(_v(x, 2)), 1.0),
        ("cos_sin_mix", lambda x: np.cos(_v(x, 2)) + 0.3 * np.sin(_v(x, 1)), 1.3),
        ("cauchy_T", lambda x: 1.0 / (1.0 + _v(x, 2) ** 2), 1.0),
    ]
    return [
        PathFunctional(arity=1, query_times=qt, fn=fn, bound=b, name=name)
        for name, fn, b in defs
    ]


def skewed_unary(horizon):
    """Bounded arity-1 functional without odd symmetry, for odd-moment
    degeneracy checks on velocity-symmetric models."""
    qt = standard_query_times(horizon)

    def fn(x):
        t = np.tanh(_v(x, 2))
        return t + 0.4 * t**2

    return PathFunctional(arity=1, query_times=qt, fn=fn, bound=1.4, name="tanh_skew_T")


def terminal_mean(horizon):
    """Unbounded arity-1 mean functional (terminal coordinate); only for
    closed-form mean comparisons, never for bounded-error estimates."""
    qt = standard_query_times(horizon)
    return PathFunctional(
        arity=1,
        query_times=qt,
        fn=lambda x: _v(x, 2),
        bound=math.inf,
        name="terminal_mean",
    )


def zero_unary(horizon):
    """Identically-zero arity-1 functional; covariance against it must come
    out exactly zero, which makes it a cheap estimator sanity row."""
    qt = standard_query_times(horizon)
    return PathFunctional(
        arity=1,
        query_times=qt,
        fn=lambda x: np.zeros(np.shape(x)[:-2]),
        bound=0.0,
        name="zero",
    )


def named_battery(name, horizon):
    if name == "pair":
        return pair_battery(horizon)
    if name == "unary":
        return unary_battery(horizon)
    raise ValueError(f"unknown battery '{name}'")
