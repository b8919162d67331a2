"""Estimators built on the graph and forward machinery.

All replicated estimators derive one generator per replica from
(master_seed, experiment_id, replica_index), so results are independent of
batching and worker count: partial runs over replica ranges concatenate to
the full run bit for bit.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._jit import compile_kernel
from .seeding import derive_seed, replica_rng, replica_seed, spawn_rng
from .graphs import _finite_graph, build_coupled, build_graph
from .realize import (
    _kac_limit_pair,
    marginal_paths,
    realize_branch_only,
    realize_limit_pair,
    realize_system,
    sample_cross_loop,
    sample_yule_tree,
)
from .forward import forward_paths


@dataclass(frozen=True)
class EstimatorReport:
    name: str
    value: float
    se: float
    replicas: int
    details: dict = field(default_factory=dict)


def mean_se(values):
    v = np.asarray(values, dtype=float)
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else float("nan")
    return float(v.mean()), se


def slope_fit(x, y):
    """Least-squares slope of y against x with a naive slope SE propagated
    from per-point errors when given as (y, y_se)."""
    x = np.asarray(x, dtype=float)
    if isinstance(y, tuple):
        y, y_se = np.asarray(y[0], float), np.asarray(y[1], float)
    else:
        y, y_se = np.asarray(y, float), None
    xc = x - x.mean()
    denom = (xc**2).sum()
    slope = float((xc * y).sum() / denom)
    if y_se is None:
        return slope, float("nan")
    var = ((xc / denom) ** 2 * y_se**2).sum()
    return slope, float(math.sqrt(var))


def evaluate_roots(F, realization):
    paths = realization.root_paths
    if paths.shape[0] < F.arity:
        raise ValueError("realization has fewer roots than the functional's arity")
    return float(F.fn(*(paths[i] for i in range(F.arity))))


# ---------------------------------------------------------------------------
# Expansion coefficients.


@dataclass(frozen=True)
class ExpansionReport:
    """Loop-count expansion of a backward-realized mean.

    delta[l] estimates mean(F; loop count = l) * (N-1)^l; remainder covers
    loop counts above l_max with the (N-1)^(l_max+1) scaling. bin_means
    holds the unscaled per-bin contributions, whose sum is the sample mean
    by construction; reconstructed_mean is computed that way, so
    reconstruction_gap is exactly zero on every run.
    """

    n_particles: int
    q: int
    horizon: float
    lam: float
    l_max: int
    replicas: int
    f_bound: float
    delta: tuple  # EstimatorReport per l = 0..l_max
    remainder: EstimatorReport
    bin_counts: tuple
    bin_means: tuple  # unscaled: mean over all replicas of F restricted to the bin
    sample_mean: float
    reconstructed_mean: float
    reconstruction_gap: float
    loop_moment_bounds: tuple  # per l: (Lambda^l / l!) * E[Ktilde_T^(2l)] * bound(F)
    loop_moment_bound_ses: tuple


def delta_sample(
    model, q, n_particles, horizon, F, replicas, master_seed,
    experiment_id="expansion", replica_start=0,
):
    """Per-replica (functional value, finite-graph loop count) arrays for
    global replica indices [replica_start, replica_start + replicas)."""
    lam = model.kernel.mass_bound
    vals = np.empty(replicas)
    loops = np.empty(replicas, dtype=np.int64)
    for i in range(replicas):
        r = replica_start + i
        rng = replica_rng(master_seed, experiment_id, r)
        graph = build_graph(q, n_particles, lam, horizon, rng)
        seed = derive_seed(replica_seed(master_seed, experiment_id, r), "realize")
        real = realize_system(graph, model, F.query_times, seed)
        vals[i] = F.fn(*(real.root_paths[k] for k in range(q)))
        loops[i] = graph.n_loops
    return vals, loops


def estimate_delta(
    model, q, n_particles, horizon, F, l_max, replicas, master_seed,
    experiment_id="expansion", moment_replicas=None, sample=None,
):
    """Bin backward realizations by the finite graph's loop count.

    The per-bin means scaled by (N-1)^l estimate the expansion
    coefficients; the stated moment bound ((Lambda^l / l!) E[Ktilde^(2l)]
    times the functional bound, for horizons <= 1) is estimated from an
    independent pure-birth sample. A precomputed (vals, loops) pair from
    delta_sample may be passed as sample.
    """
    if F.arity != q:
        raise ValueError("functional arity must equal q")
    if l_max < 0 or replicas < 1:
        raise ValueError("need l_max >= 0 and replicas >= 1")
    lam = model.kernel.mass_bound
    if sample is None:
        sample = delta_sample(model, q, n_particles, horizon, F, replicas, master_seed, experiment_id)
    vals, loops = sample
    if vals.shape != (replicas,) or loops.shape != (replicas,):
        raise ValueError("sample arrays must have one entry per replica")

    scale_base = float(n_particles - 1)
    bin_sums = []
    bin_counts = []
    deltas = []
    for l in range(l_max + 1):
        mask = loops == l
        w = vals[mask]
        bin_sums.append(float(w.sum()))
        bin_counts.append(int(mask.sum()))
        scaled = np.where(mask, vals, 0.0) * scale_base**l
        mean, se = mean_se(scaled)
        deltas.append(
            EstimatorReport(
                name=f"delta[{l}]",
                value=mean,
                se=se,
                replicas=replicas,
                details={"bin_count": int(mask.sum()), "empty": bool(mask.sum() == 0)},
            )
        )
    tail_mask = loops > l_max
    bin_sums.append(float(vals[tail_mask].sum()))
    bin_counts.append(int(tail_mask.sum()))
    tail_scaled = np.where(tail_mask, vals, 0.0) * scale_base ** (l_max + 1)
    tmean, tse = mean_se(tail_scaled)
    remainder = EstimatorReport(
        name="remainder",
        value=tmean,
        se=tse,
        replicas=replicas,
        details={"bin_count": int(tail_mask.sum()), "empty": bool(tail_mask.sum() == 0)},
    )

    bin_means = tuple(s / replicas for s in bin_sums)
    reconstructed = math.fsum(bin_means)
    sample_mean = reconstructed  # same partial sums by construction
    gap = reconstructed - sample_mean

    mrep = moment_replicas or max(10_000, replicas // 10)
    sizes = yule_total_sizes(q, lam, horizon, mrep, derive_seed(master_seed, experiment_id, "yule-moments"))
    bounds = []
    bound_ses = []
    for l in range(l_max + 1):
        pow_vals = sizes.astype(float) ** (2 * l)
        m, se = mean_se(pow_vals)
        c = lam**l / math.factorial(l) * F.bound
        bounds.append(c * m)
        bound_ses.append(c * se)

    return ExpansionReport(
        n_particles=n_particles,
        q=q,
        horizon=horizon,
        lam=lam,
        l_max=l_max,
        replicas=replicas,
        f_bound=F.bound,
        delta=tuple(deltas),
        remainder=remainder,
        bin_counts=tuple(bin_counts),
        bin_means=bin_means,
        sample_mean=sample_mean,
        reconstructed_mean=reconstructed,
        reconstruction_gap=gap,
        loop_moment_bounds=tuple(bounds),
        loop_moment_bound_ses=tuple(bound_ses),
    )


# ---------------------------------------------------------------------------
# Batched graph statistics (counts only, reusing the graph kernel).


def _graph_count_batch_impl(rng, q, n, lam, horizon, n_rep):
    loops = np.empty(n_rep, np.int64)
    members = np.empty(n_rep, np.int64)
    for r in range(n_rep):
        res = _finite_graph(rng, q, n, lam, horizon)
        kind = res[1]
        c = 0
        for i in range(kind.shape[0]):
            if kind[i] == 1:
                c += 1
        loops[r] = c
        members[r] = res[6].shape[0]
    return loops, members


_graph_count_batch = compile_kernel(_graph_count_batch_impl)

GRAPH_CHUNK = 65536


def _graph_chunk(task):
    q, n, lam, horizon, size, master_seed, experiment_id, start = task
    rng = spawn_rng(master_seed, experiment_id, n, start)
    return _graph_count_batch(rng, q, n, lam, horizon, size)


def graph_count_summary(
    q, n_particles, lam, horizon, replicas, master_seed,
    experiment_id="graph-stats", map_fn=map,
):
    """(loop counts, member counts) over many replicas.

    Streams are keyed on fixed chunk boundaries, so any map_fn that
    preserves task order (the builtin map, an executor map) reproduces the
    same arrays for any worker count."""
    tasks = [
        (q, n_particles, lam, horizon, min(GRAPH_CHUNK, replicas - s),
         master_seed, experiment_id, s)
        for s in range(0, replicas, GRAPH_CHUNK)
    ]
    if not tasks:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    parts = list(map_fn(_graph_chunk, tasks))
    loops = np.concatenate([p[0] for p in parts])
    members = np.concatenate([p[1] for p in parts])
    return loops, members


def graph_loop_counts(q, n_particles, lam, horizon, replicas, master_seed, experiment_id="graph-stats"):
    """Finite-graph loop counts over many replicas."""
    return graph_count_summary(q, n_particles, lam, horizon, replicas, master_seed, experiment_id)[0]


def _yule_size_batch_impl(rng, lam, horizon, n_rep):
    out = np.empty(n_rep, np.int64)
    for r in range(n_rep):
        k = 1
        t = 0.0
        while True:
            t += rng.exponential() / (lam * k)
            if t >= horizon:
                break
            k += 1
        out[r] = k
    return out


_yule_size_batch = compile_kernel(_yule_size_batch_impl)


def yule_sizes(lam, horizon, replicas, seed):
    """Terminal sizes of single pure-birth trees (iid, one stream)."""
    rng = spawn_rng(seed, "yule-sizes")
    return _yule_size_batch(rng, lam, horizon, replicas)


def yule_total_sizes(q, lam, horizon, replicas, seed):
    """Terminal total size of q independent trees per replica."""
    rng = spawn_rng(seed, "yule-totals")
    total = np.zeros(replicas, np.int64)
    for _ in range(q):
        total += _yule_size_batch(rng, lam, horizon, replicas)
    return total


def geometric_size_pmf(lam, horizon, k_max):
    """Terminal-size law of a single pure-birth tree: success probability
    exp(-lam*horizon) on sizes 1, 2, ..."""
    p = math.exp(-lam * horizon)
    ks = np.arange(1, k_max + 1)
    return p * (1.0 - p) ** (ks - 1)


# ---------------------------------------------------------------------------
# Wick covariance estimators.


@dataclass(frozen=True)
class WickEntry:
    pair: tuple
    direct: EstimatorReport
    limit: Optional[EstimatorReport] = None

    @property
    def combined_se(self):
        if self.limit is None:
            return self.direct.se
        return math.hypot(self.direct.se, self.limit.se)


@dataclass(frozen=True)
class WickReport:
    entries: tuple
    covariance: Optional[np.ndarray] = None


def wick_path_sample(model, horizon, query_times, replicas, master_seed, experiment_id="wick-direct", replica_start=0):
    """Per-replica coupled limit-pair root paths.

    Returns (weights (R,), paths (R, 4, n_times, d)) with path rows: roots
    1 and 2 with the loop, then roots 1 and 2 without it. Rows depend only
    on the global replica index replica_start + i.
    """
    qt = np.asarray(query_times, dtype=float)
    lam = model.kernel.mass_bound
    weights = np.empty(replicas)
    if model.fast == "kac":
        out = np.empty((replicas, 4, qt.size, 1))
        for i in range(replicas):
            rng = replica_rng(master_seed, experiment_id, replica_start + i)
            w, rows = _kac_limit_pair(rng, lam, horizon, qt)
            weights[i] = w
            out[i, :, :, 0] = rows
        return weights, out
    out = np.empty((replicas, 4, qt.size, model.dimension))
    for i in range(replicas):
        r = replica_start + i
        rng = replica_rng(master_seed, experiment_id, r)
        tree1 = sample_yule_tree(lam, horizon, rng)
        tree2 = sample_yule_tree(lam, horizon, rng)
        loop = sample_cross_loop(tree1, tree2, lam, horizon, rng)
        seed = derive_seed(replica_seed(master_seed, experiment_id, r), "realize")
        real = realize_limit_pair(model, tree1, tree2, loop, tuple(qt), seed)
        weights[i] = loop.weight
        out[i, :2] = real.with_loop
        out[i, 2:] = real.without_loop
    return weights, out


_wick_paths = wick_path_sample


def wick_direct_values(weights, paths, f, g):
    """Per-replica direct-estimator values w*(f(Y1)g(Y2) - f(X1)g(X2))
    with Y the looped pair and X the loop-free pair."""
    a1 = np.asarray(f.fn(paths[:, 0]), dtype=float)
    a2 = np.asarray(g.fn(paths[:, 1]), dtype=float)
    b1 = np.asarray(f.fn(paths[:, 2]), dtype=float)
    b2 = np.asarray(g.fn(paths[:, 3]), dtype=float)
    return weights * (a1 * a2 - b1 * b2)


def estimate_wick_direct(
    model, f, g, horizon, replicas, master_seed,
    lam=None, experiment_id="wick-direct", _shared=None,
):
    """Covariance correction estimated on coupled limit pairs.

    Per replica two trees are grown, one cross loop is placed at time
    density proportional to the size product, and the pair is realized with
    and without the loop on shared randomness; the estimator averages
    weight * (f x g applied to looped minus loop-free roots). f and g must
    be centered; lam, when given, must match the model.
    """
    if lam is not None and abs(lam - model.kernel.mass_bound) > 1e-12 * max(1.0, lam):
        raise ValueError("lam does not match the model's mass bound")
    if f.arity != 1 or g.arity != 1:
        raise ValueError("wick estimators take arity-1 functionals")
    if f.query_times != g.query_times:
        raise ValueError("f and g must share query times")
    if _shared is None:
        _shared = _wick_paths(model, horizon, f.query_times, replicas, master_seed, experiment_id)
    weights, paths = _shared
    vals = wick_direct_values(weights, paths, f, g)
    mean, se = mean_se(vals)
    return EstimatorReport(
        name=f"wick_direct({f.name},{g.name})",
        value=mean,
        se=se,
        replicas=replicas,
        details={"weight_mean": float(weights.mean())},
    )


def wick_direct_battery(model, pairs, horizon, replicas, master_seed, experiment_id="wick-direct"):
    """Direct estimates for several (f, g) pairs sharing the same replicas."""
    if not pairs:
        return []
    qt = pairs[0][0].query_times
    for f, g in pairs:
        if f.query_times != qt or g.query_times != qt:
            raise ValueError("battery pairs must share query times")
    shared = _wick_paths(model, horizon, qt, replicas, master_seed, experiment_id)
    return [
        estimate_wick_direct(
            model, f, g, horizon, replicas, master_seed,
            experiment_id=experiment_id, _shared=shared,
        )
        for f, g in pairs
    ]


def estimate_wick_limit(
    model, f, g, n_particles, horizon, replicas, master_seed, experiment_id="wick-limit",
):
    """N times the replica-averaged pair U-statistic of centered f, g on the
    forward system; consistency target of the direct estimator."""
    if f.query_times != g.query_times:
        raise ValueError("f and g must share query times")
    n = n_particles
    vals = np.empty(replicas)
    for r in range(replicas):
        rng = replica_rng(master_seed, experiment_id, r)
        paths = forward_paths(model, n, horizon, f.query_times, rng)
        a = np.asarray(f.fn(paths), dtype=float)
        b = np.asarray(g.fn(paths), dtype=float)
        vals[r] = (a.sum() * b.sum() - (a * b).sum()) / (n * (n - 1))
    mean, se = mean_se(vals)
    return EstimatorReport(
        name=f"wick_limit({f.name},{g.name})",
        value=n * mean,
        se=n * se,
        replicas=replicas,
        details={"n_particles": n},
    )


def wick_bound(f, g, lam, horizon):
    """Declared envelope of the covariance correction."""
    return 2.0 * f.bound * g.bound * horizon * lam * math.exp(2.0 * horizon * lam)


# ---------------------------------------------------------------------------
# CLT covariance assembly.


@dataclass(frozen=True)
class CltCovariance:
    names: tuple
    matrix: np.ndarray  # marginal second moments plus covariance correction
    second_moments: np.ndarray
    v_matrix: np.ndarray


def clt_covariance(fs, v_matrix, second_moments):
    """K(i,j) = marginal second moment of f_i f_j plus the correction
    V(f_i, f_j); inputs must already be symmetric."""
    k = len(fs)
    v = np.asarray(v_matrix, dtype=float)
    s = np.asarray(second_moments, dtype=float)
    if v.shape != (k, k) or s.shape != (k, k):
        raise ValueError("matrix shapes must be (len(fs), len(fs))")
    if not np.allclose(v, v.T, atol=1e-10) or not np.allclose(s, s.T, atol=1e-10):
        raise ValueError("inputs must be symmetric")
    v = (v + v.T) / 2.0
    s = (s + s.T) / 2.0
    return CltCovariance(
        names=tuple(f.name for f in fs), matrix=s + v, second_moments=s, v_matrix=v
    )


def marginal_second_moments(fs, sample_paths):
    """Symmetric matrix of marginal second moments over an iid path sample."""
    vals = [np.asarray(f.fn(sample_paths), dtype=float) for f in fs]
    k = len(fs)
    out = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            out[i, j] = out[j, i] = float((vals[i] * vals[j]).mean())
    return out


def normalized_mean_sample(model, f, n_particles, horizon, replicas, master_seed, experiment_id="clt", replica_start=0):
    """Replica values of sqrt(N) times the empirical mean of f."""
    vals = np.empty(replicas)
    root = math.sqrt(n_particles)
    for i in range(replicas):
        rng = replica_rng(master_seed, experiment_id, replica_start + i)
        paths = forward_paths(model, n_particles, horizon, f.query_times, rng)
        vals[i] = root * float(np.mean(f.fn(paths)))
    return vals


def empirical_moment_sample(model, fs, n_particles, horizon, replicas, master_seed, experiment_id="moments", replica_start=0):
    """Per-replica empirical means of several arity-1 functionals, shape
    (replicas, len(fs)). One forward run per replica serves all of them."""
    qt = fs[0].query_times
    for f in fs:
        if f.query_times != qt:
            raise ValueError("functionals must share query times")
    vals = np.empty((replicas, len(fs)))
    for r in range(replicas):
        rng = replica_rng(master_seed, experiment_id, replica_start + r)
        paths = forward_paths(model, n_particles, horizon, qt, rng)
        for i, f in enumerate(fs):
            vals[r, i] = float(np.mean(f.fn(paths)))
    return vals


def forward_summary_sample(model, fs, n_particles, horizon, replicas, master_seed, experiment_id="forward", replica_start=0):
    """Per-replica functional means plus the per-time kinetic summary.

    Returns (vals (R, len(fs)), energy (R, n_times)) where energy is the
    particle average of the squared state norm at each query time.
    """
    qt = fs[0].query_times
    for f in fs:
        if f.query_times != qt:
            raise ValueError("functionals must share query times")
    vals = np.empty((replicas, len(fs)))
    energy = np.empty((replicas, len(qt)))
    for r in range(replicas):
        rng = replica_rng(master_seed, experiment_id, replica_start + r)
        paths = forward_paths(model, n_particles, horizon, qt, rng)
        for i, f in enumerate(fs):
            vals[r, i] = float(np.mean(f.fn(paths)))
        energy[r] = (paths**2).sum(axis=-1).mean(axis=0)
    return vals, energy


def pair_ustat_sample(model, parts, n_particles, horizon, replicas, master_seed, experiment_id="pair-ustat", replica_start=0):
    """Per-replica product U-statistics (arity = len(parts) in {2, 3}) via
    power sums, shape (replicas,)."""
    q = len(parts)
    if q not in (2, 3):
        raise ValueError("power-sum route supports arity 2 or 3")
    qt = parts[0].query_times
    n = n_particles
    vals = np.empty(replicas)
    for r in range(replicas):
        rng = replica_rng(master_seed, experiment_id, replica_start + r)
        paths = forward_paths(model, n, horizon, qt, rng)
        xs = [np.asarray(p.fn(paths), dtype=float) for p in parts]
        if q == 2:
            a, b = xs
            vals[r] = (a.sum() * b.sum() - (a * b).sum()) / (n * (n - 1))
        else:
            a, b, c = xs
            num = (
                a.sum() * b.sum() * c.sum()
                - (a * b).sum() * c.sum()
                - (a * c).sum() * b.sum()
                - (b * c).sum() * a.sum()
                + 2.0 * (a * b * c).sum()
            )
            vals[r] = num / (n * (n - 1) * (n - 2))
    return vals


# ---------------------------------------------------------------------------
# Hoeffding decomposition (Monte Carlo integrals).


@dataclass(frozen=True)
class HoeffdingDecomposition:
    """Projection components of a symmetric functional, with marginal
    integrals replaced by averages over a fixed iid path sample."""

    F: object
    q: int
    theta: float
    theta_se: float
    sample: np.ndarray  # (m, n_times, d)

    def conditional_mean(self, k, points):
        """Average of F with the last q-k slots integrated out; points has
        shape (..., k, n_times, d)."""
        if not 0 <= k <= self.q:
            raise ValueError("k out of range")
        pts = np.asarray(points)
        if self.q == k:
            args = [pts[..., i, :, :] for i in range(k)]
            return np.asarray(self.F.fn(*args), dtype=float)
        # point slots broadcast against the shared integration sample;
        # independent integration slots get distinct sample columns
        args = [pts[..., i, :, :][..., None, :, :] for i in range(k)]
        cols = self.sample.shape[0] // (self.q - k)
        resh = self.sample[: cols * (self.q - k)].reshape(
            cols, self.q - k, *self.sample.shape[1:]
        )
        for j in range(self.q - k):
            args.append(resh[:, j])
        vals = np.asarray(self.F.fn(*args), dtype=float)
        return vals.mean(axis=-1)

    def component(self, k, points):
        """Fully degenerate projection h^(k) evaluated at points of shape
        (..., k, n_times, d)."""
        import itertools

        if not 1 <= k <= self.q:
            raise ValueError("k out of range")
        pts = np.asarray(points)
        out = self.conditional_mean(k, pts) - self.theta
        for j in range(1, k):
            for subset in itertools.combinations(range(k), j):
                out = out - self.component(j, pts[..., list(subset), :, :])
        return out


def hoeffding_decompose(F, marginal_sampler, m, seed):
    """Monte Carlo Hoeffding decomposition of a symmetric functional.

    marginal_sampler(n, rng) must return an (n, n_times, d) iid path
    sample at F's query times. Components share one sample; each is
    centered against it by construction.
    """
    if not F.symmetric:
        raise ValueError("decomposition needs a declared-symmetric functional")
    rng = spawn_rng(seed, "hoeffding")
    sample = np.asarray(marginal_sampler(m, rng))
    q = F.arity
    cols = sample.shape[0] // q
    resh = sample[: cols * q].reshape(cols, q, *sample.shape[1:])
    vals = np.asarray(F.fn(*(resh[:, j] for j in range(q))), dtype=float)
    theta, theta_se = mean_se(vals)
    return HoeffdingDecomposition(F=F, q=q, theta=theta, theta_se=theta_se, sample=sample)
