"""Forward particle system simulation.

The N-particle system jumps at an aggregate exponential clock of rate
N*mass_bound/2. Each ring draws an ordered pair (i, j) of distinct indices,
then an acceptance uniform u; the collision fires iff u*mass_bound is below
the current pair mass, so rejected rings leave every particle untouched.
Between rings particles follow the model's free motion.

Hot models (Kac, linear toy) run in compiled per-replica kernels that record
state snapshots at the requested query times; everything else goes through
the generic event-driven engine below.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._jit import compile_kernel
from .models import ModelSpec, apply_jump

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class TrajectorySkeleton:
    """One particle's path: initial state plus post-event states at event
    times. Deterministic free motion is re-applied when sampling between
    events; stochastic motion holds the last recorded state (documented
    bias, avoided by snapshotting at query times during simulation)."""

    initial: np.ndarray
    times: np.ndarray
    states: np.ndarray
    motion: object
    horizon: float

    def state_at(self, t):
        if t < 0 or t > self.horizon:
            raise ValueError("time outside [0, horizon]")
        idx = int(np.searchsorted(self.times, t, side="right"))
        if idx == 0:
            base, t0 = self.initial, 0.0
        else:
            base, t0 = self.states[idx - 1], float(self.times[idx - 1])
        if self.motion.deterministic:
            return self.motion.advance(base.copy(), t - t0, None)
        return base.copy()

    def sample(self, query_times):
        return np.stack([self.state_at(t) for t in query_times])


@dataclass(frozen=True)
class SystemTrajectory:
    model: ModelSpec
    n_particles: int
    horizon: float
    event_times: np.ndarray
    event_pairs: np.ndarray
    event_accepted: np.ndarray
    skeletons: tuple
    query_times: tuple
    snapshots: Optional[np.ndarray]  # (n_times, N, d), exact states at query_times

    def paths(self, query_times=None):
        """States at query times, shaped (N, n_times, d)."""
        if query_times is None or tuple(query_times) == self.query_times:
            if self.snapshots is not None:
                return np.swapaxes(self.snapshots, 0, 1).copy()
            query_times = self.query_times
        return np.stack([sk.sample(query_times) for sk in self.skeletons])


def simulate_forward(model, n_particles, horizon, rng, query_times=()):
    """Run one realization of the interacting system.

    Returns a SystemTrajectory with exact snapshots at the query times and
    per-particle skeletons for off-grid sampling.
    """
    if n_particles < 2:
        raise ValueError("need at least 2 particles")
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    qt = tuple(float(t) for t in query_times)
    if any(t < 0 or t > horizon for t in qt):
        raise ValueError("query times must lie in [0, horizon]")
    if any(b <= a for a, b in zip(qt, qt[1:])):
        raise ValueError("query times must be strictly increasing")

    n = n_particles
    d = model.dimension
    states = np.stack([model.sample_initial(rng) for _ in range(n)])
    if states.shape != (n, d):
        raise ValueError("initial sampler returned wrong shape")
    initial = states.copy()
    last_t = np.zeros(n)
    ev_times, ev_pairs, ev_acc = [], [], []
    piece_times = [[] for _ in range(n)]
    piece_states = [[] for _ in range(n)]
    snapshots = np.empty((len(qt), n, d)) if qt else None

    lam = model.kernel.mass_bound
    rate = n * lam / 2.0
    motion = model.motion

    def advance_to(i, t):
        if t > last_t[i]:
            states[i] = motion.advance(states[i], t - last_t[i], rng)
            last_t[i] = t

    qi = 0
    t = 0.0
    while True:
        t_next = t + rng.exponential() / rate if rate > 0 else math.inf
        while qi < len(qt) and qt[qi] < t_next:
            for i in range(n):
                advance_to(i, qt[qi])
            snapshots[qi] = states
            qi += 1
        if t_next >= horizon:
            break
        t = t_next
        i = int(rng.integers(0, n))
        j = int(rng.integers(0, n - 1))
        if j >= i:
            j += 1
        advance_to(i, t)
        advance_to(j, t)
        u = rng.random()
        m = model.kernel.mass(states[i], states[j])
        if m > lam * (1.0 + 1e-12):
            raise AssertionError("pair mass exceeds declared bound")
        accepted = u * lam < m
        if accepted:
            zi, zj = apply_jump(model, states[i], states[j], rng)
            states[i], states[j] = zi, zj
            for k, z in ((i, zi), (j, zj)):
                piece_times[k].append(t)
                piece_states[k].append(z.copy())
        ev_times.append(t)
        ev_pairs.append((i, j))
        ev_acc.append(accepted)

    skeletons = tuple(
        TrajectorySkeleton(
            initial=initial[k],
            times=np.array(piece_times[k]),
            states=np.array(piece_states[k]).reshape(len(piece_times[k]), d),
            motion=motion,
            horizon=horizon,
        )
        for k in range(n)
    )
    return SystemTrajectory(
        model=model,
        n_particles=n,
        horizon=horizon,
        event_times=np.array(ev_times),
        event_pairs=np.array(ev_pairs, dtype=np.int64).reshape(len(ev_pairs), 2),
        event_accepted=np.array(ev_acc, dtype=bool),
        skeletons=skeletons,
        query_times=qt,
        snapshots=snapshots,
    )


def _forward_kac_impl(rng, n, lam, horizon, qtimes):
    """One Kac replica; returns (n_times, n) velocity snapshots."""
    x = rng.standard_normal(n)
    nq = qtimes.shape[0]
    out = np.empty((nq, n))
    qi = 0
    t = 0.0
    scale = 2.0 / (n * lam)
    while True:
        t += rng.exponential() * scale
        while qi < nq and qtimes[qi] < t:
            out[qi, :] = x
            qi += 1
        if t >= horizon:
            break
        i = int(rng.integers(0, n))
        j = int(rng.integers(0, n - 1))
        if j >= i:
            j += 1
        u = rng.random()
        if u * lam < lam:
            th = rng.random() * TWO_PI
            c = math.cos(th)
            s = math.sin(th)
            v = x[i]
            w = x[j]
            x[i] = v * c - w * s
            x[j] = v * s + w * c
    while qi < nq:
        out[qi, :] = x
        qi += 1
    return out


def _forward_toy_impl(rng, n, jump_rate, mean_jump, sd_jump, mean0, sd0, horizon, qtimes):
    """One linear-toy replica; one-sided jumps, normal start."""
    x = mean0 + sd0 * rng.standard_normal(n)
    nq = qtimes.shape[0]
    out = np.empty((nq, n))
    qi = 0
    t = 0.0
    scale = 1.0 / (n * jump_rate) if jump_rate > 0.0 else math.inf
    while True:
        t += rng.exponential() * scale
        while qi < nq and qtimes[qi] < t:
            out[qi, :] = x
            qi += 1
        if t >= horizon:
            break
        i = int(rng.integers(0, n))
        j = int(rng.integers(0, n - 1))
        if j >= i:
            j += 1
        u = rng.random()
        if u < 0.5:
            x[i] += mean_jump + sd_jump * rng.standard_normal()
        else:
            x[j] += mean_jump + sd_jump * rng.standard_normal()
    while qi < nq:
        out[qi, :] = x
        qi += 1
    return out


_forward_kac = compile_kernel(_forward_kac_impl)
_forward_toy = compile_kernel(_forward_toy_impl)


def forward_paths(model, n_particles, horizon, query_times, rng):
    """States of all particles at the query times, shaped (N, n_times, d).

    Dispatches to a compiled kernel for the builtin fast models; the draw
    sequence of the kernels matches the generic engine in law but not
    stream-for-stream (the kernels skip draws the generic engine spends on
    degenerate dimensions).
    """
    qt = np.asarray(query_times, dtype=float)
    if qt.ndim != 1 or qt.size == 0:
        raise ValueError("need at least one query time")
    if model.fast == "kac":
        lam = model.params["lam"]
        out = _forward_kac(rng, n_particles, lam, horizon, qt)
        return np.swapaxes(out, 0, 1)[:, :, None].copy()
    if model.fast == "toy":
        p = model.params
        out = _forward_toy(
            rng, n_particles, p["jump_rate"], p["mean_jump"], p["sd_jump"],
            p["mean0"], p["sd0"], horizon, qt,
        )
        return np.swapaxes(out, 0, 1)[:, :, None].copy()
    traj = simulate_forward(model, n_particles, horizon, rng, query_times=tuple(qt))
    return traj.paths()


def _as_paths(traj_or_paths, query_times):
    if isinstance(traj_or_paths, np.ndarray):
        return traj_or_paths
    return traj_or_paths.paths(query_times)


def empirical_mean(traj_or_paths, f):
    """Mean of an arity-1 functional over the particle cloud."""
    if f.arity != 1:
        raise ValueError("empirical_mean needs an arity-1 functional")
    paths = _as_paths(traj_or_paths, f.query_times)
    return float(np.mean(f.fn(paths)))


def u_statistic(traj_or_paths, F):
    """U-statistic of F over ordered tuples of distinct particles.

    Product functionals of arity <= 3 use power sums; otherwise small
    systems are enumerated exactly and arity-2 functionals get a
    broadcasted pair evaluation.
    """
    paths = _as_paths(traj_or_paths, F.query_times)
    n = paths.shape[0]
    q = F.arity
    if q > n:
        raise ValueError("arity exceeds particle count")
    from .functionals import ProductFunctional

    if isinstance(F, ProductFunctional) and F.parts and q <= 3:
        return _product_u_stat(paths, F.parts)
    if q == 1:
        return float(np.mean(F.fn(paths)))
    if n**q <= 200_000:
        import itertools

        total = 0.0
        count = 0
        for tup in itertools.permutations(range(n), q):
            total += float(F.fn(*(paths[i] for i in tup)))
            count += 1
        return total / count
    if q == 2:
        vals = np.asarray(F.fn(paths[:, None], paths[None, :]), dtype=float)
        mask = ~np.eye(n, dtype=bool)
        return float(vals[mask].mean())
    raise ValueError("system too large for direct enumeration; use a product functional")


def _product_u_stat(paths, parts):
    n = paths.shape[0]
    q = len(parts)
    vals = [np.asarray(p.fn(paths), dtype=float) for p in parts]
    if q == 1:
        return float(vals[0].mean())
    if q == 2:
        a, b = vals
        return float((a.sum() * b.sum() - (a * b).sum()) / (n * (n - 1)))
    a, b, c = vals
    sa, sb, sc = a.sum(), b.sum(), c.sum()
    sab, sac, sbc = (a * b).sum(), (a * c).sum(), (b * c).sum()
    sabc = (a * b * c).sum()
    num = sa * sb * sc - sab * sc - sac * sb - sbc * sa + 2.0 * sabc
    return float(num / (n * (n - 1) * (n - 2)))


def u_statistic_pair_batch(paths, F):
    """Ordered-pair U-statistic per replica; paths (R, N, n_times, d)."""
    if F.arity != 2:
        raise ValueError("needs an arity-2 functional")
    n = paths.shape[1]
    ii, jj = np.nonzero(~np.eye(n, dtype=bool))
    vals = np.asarray(F.fn(paths[:, ii], paths[:, jj]), dtype=float)
    return vals.mean(axis=1)
