"""Exponential races, Poisson event streams, and Yule cluster sizes.

All rates in this package are piecewise constant in time (they are step
functions of cluster sizes), so inhomogeneous sampling is done exactly with
per-segment exponential clocks rather than thinning against a majorant.

Exact ties between event times from independent streams have probability
zero; they are treated as errors to surface seed reuse.
"""

from dataclasses import dataclass

import numpy as np

from ._jit import compile_kernel


class DuplicateTimeError(ValueError):
    """Two supposedly independent streams produced the same timestamp."""


@dataclass(frozen=True)
class RatePath:
    """Piecewise-constant nonnegative rate, right continuous.

    ``values[i]`` applies on ``[times[i], times[i+1])``; the last value
    extends to any horizon. ``times[0]`` must be 0.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or v.ndim != 1 or t.size != v.size or t.size == 0:
            raise ValueError("times and values must be 1-d arrays of equal positive length")
        if t[0] != 0.0:
            raise ValueError("rate path must start at time 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if np.any(~np.isfinite(v)) or np.any(v < 0):
            raise ValueError("rates must be finite and nonnegative")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, value):
        return cls(np.array([0.0]), np.array([float(value)]))

    def at(self, t):
        if t < 0:
            raise ValueError("negative time")
        idx = int(np.searchsorted(self.times, t, side="right")) - 1
        return float(self.values[idx])

    def segments(self, horizon):
        """Yield (start, end, rate) covering [0, horizon)."""
        if horizon <= 0:
            return
        for i, start in enumerate(self.times):
            if start >= horizon:
                break
            end = self.times[i + 1] if i + 1 < self.times.size else horizon
            yield float(start), float(min(end, horizon)), float(self.values[i])

    def integral(self, horizon):
        total = 0.0
        for start, end, rate in self.segments(horizon):
            total += rate * (end - start)
        return total

    def inverse_integral(self, u, horizon):
        """Times t with cumulative integral equal to u (vectorized)."""
        starts, ends, rates = [], [], []
        for s, e, r in self.segments(horizon):
            starts.append(s)
            ends.append(e)
            rates.append(r)
        starts = np.array(starts)
        rates = np.array(rates)
        cum = np.concatenate([[0.0], np.cumsum(rates * (np.array(ends) - starts))])
        u = np.asarray(u, dtype=float)
        if np.any(u < 0) or np.any(u > cum[-1]):
            raise ValueError("u outside the cumulative range")
        idx = np.minimum(np.searchsorted(cum, u, side="right") - 1, len(rates) - 1)
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(rates[idx] > 0, (u - cum[idx]) / rates[idx], 0.0)
        return starts[idx] + frac

    def product(self, other):
        """Pointwise product as a new RatePath."""
        times = np.union1d(self.times, other.times)
        values = np.array([self.at(t) * other.at(t) for t in times])
        return RatePath(times, values)

    def scale(self, c):
        if c < 0:
            raise ValueError("negative scale")
        return RatePath(self.times.copy(), self.values * float(c))


@dataclass(frozen=True)
class ClusterSizePaths:
    """Sizes of independent pure-birth clusters on [0, horizon].

    Cluster i starts at size 1 and gains one member at each jump time.
    """

    horizon: float
    jump_times: tuple

    def __post_init__(self):
        jt = tuple(np.asarray(t, dtype=float) for t in self.jump_times)
        for t in jt:
            if t.size and (np.any(np.diff(t) <= 0) or t[0] <= 0 or t[-1] >= self.horizon):
                raise ValueError("jump times must be strictly increasing inside (0, horizon)")
        object.__setattr__(self, "jump_times", jt)

    @property
    def n_clusters(self):
        return len(self.jump_times)

    def size_at(self, i, s):
        """K^i_s, right continuous."""
        return 1 + int(np.searchsorted(self.jump_times[i], s, side="right"))

    def total_at(self, s):
        return sum(self.size_at(i, s) for i in range(self.n_clusters))

    def final_sizes(self):
        return np.array([1 + t.size for t in self.jump_times], dtype=np.int64)

    def size_path(self, i):
        """(times, sizes) step representation, times[0] = 0."""
        jt = self.jump_times[i]
        times = np.concatenate([[0.0], jt])
        sizes = np.arange(1, jt.size + 2, dtype=float)
        return times, sizes

    def rate_path(self, i, scale=1.0):
        times, sizes = self.size_path(i)
        return RatePath(times, sizes * scale)

    def product_rate(self, i, j, scale=1.0):
        """RatePath for scale * K^i_s * K^j_s."""
        return self.rate_path(i).product(self.rate_path(j)).scale(scale)


def exp_race(rates, rng):
    """Competing exponential clocks.

    Returns (winner_index, holding_time). With all rates zero returns
    (None, None). An exact tie between two finite clocks raises, since it
    signals a reused stream.
    """
    rates = np.asarray(rates, dtype=float)
    if rates.size == 0:
        raise ValueError("need at least one rate")
    if np.any(~np.isfinite(rates)) or np.any(rates < 0):
        raise ValueError("rates must be finite and nonnegative")
    if not np.any(rates > 0):
        return None, None
    draws = rng.exponential(size=rates.size)
    with np.errstate(divide="ignore"):
        times = np.where(rates > 0, draws / rates, np.inf)
    winner = int(np.argmin(times))
    t = times[winner]
    if np.count_nonzero(times == t) > 1:
        raise DuplicateTimeError("exact tie between independent clocks")
    return winner, float(t)


def sample_inhom_poisson(rate, horizon, rng):
    """Event times of an inhomogeneous Poisson process with piecewise-constant
    rate on [0, horizon). Exact per-segment exponential sampling."""
    if horizon < 0:
        raise ValueError("negative horizon")
    out = []
    for start, end, r in rate.segments(horizon):
        if r <= 0:
            continue
        t = start
        while True:
            t += rng.exponential(1.0 / r)
            if t >= end:
                break
            out.append(t)
    return np.array(out, dtype=float)


def conditional_jump_times(rate, horizon, k, rng):
    """Given that k events occurred on [0, horizon), sample their times: the
    order statistics of k i.i.d. draws with density rate / integral."""
    if k < 1:
        raise ValueError("k must be >= 1")
    total = rate.integral(horizon)
    if total <= 0:
        raise ValueError("total rate is zero, cannot place events")
    u = rng.random(k) * total
    return np.sort(rate.inverse_integral(u, horizon))


def _as_fraction_path(alpha):
    if isinstance(alpha, RatePath):
        return alpha
    return RatePath.constant(float(alpha))


def thin(events, split, rng):
    """Split one event stream into exclusive substreams.

    ``split`` lists fraction paths alpha^1..alpha^j with values in [0,1] and
    pointwise sum <= 1; event at time t joins stream i with probability
    alpha^i(t), independently across events. Events matching no stream are
    dropped. Returns a list of j arrays.
    """
    events = np.asarray(events, dtype=float)
    paths = [_as_fraction_path(a) for a in split]
    out = [[] for _ in paths]
    for t in events:
        alphas = np.array([p.at(t) for p in paths])
        if np.any(alphas < 0) or np.any(alphas > 1):
            raise ValueError("fractions must lie in [0, 1]")
        csum = np.cumsum(alphas)
        if csum[-1] > 1 + 1e-12:
            raise ValueError("fractions sum above 1")
        u = rng.random()
        idx = int(np.searchsorted(csum, u, side="right"))
        if idx < len(paths):
            out[idx].append(t)
    return [np.array(s, dtype=float) for s in out]


def superpose(streams):
    """Merge sorted streams; returns (times, source_labels).

    A duplicate timestamp across streams raises DuplicateTimeError.
    """
    times = np.concatenate([np.asarray(s, dtype=float) for s in streams]) if streams else np.array([])
    labels = np.concatenate(
        [np.full(len(np.asarray(s)), i, dtype=np.int64) for i, s in enumerate(streams)]
    ) if streams else np.array([], dtype=np.int64)
    order = np.argsort(times, kind="stable")
    times, labels = times[order], labels[order]
    if times.size > 1 and np.any(np.diff(times) == 0):
        raise DuplicateTimeError("duplicate timestamp across streams")
    return times, labels


def _yule_jumps_impl(rng, lam, horizon, cap):
    times = np.empty(cap, dtype=np.float64)
    n = 0
    k = 1
    t = 0.0
    while True:
        t += rng.exponential() / (lam * k)
        if t >= horizon:
            break
        if n == times.shape[0]:
            grown = np.empty(2 * times.shape[0], dtype=np.float64)
            grown[:n] = times
            times = grown
        times[n] = t
        n += 1
        k += 1
    return times[:n]


_yule_jumps = compile_kernel(_yule_jumps_impl)


def sample_yule(q, lam, horizon, rng):
    """q independent pure-birth processes; cluster i splits at rate lam * size."""
    if q < 1:
        raise ValueError("q must be >= 1")
    if lam <= 0:
        raise ValueError("lam must be positive")
    jumps = tuple(_yule_jumps(rng, float(lam), float(horizon), 16) for _ in range(q))
    return ClusterSizePaths(horizon=float(horizon), jump_times=jumps)
