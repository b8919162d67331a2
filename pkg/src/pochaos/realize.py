"""Realizing backward graphs as particle trajectories.

Every member of a graph gets an iid initial state at forward time 0 and
evolves under the model's free motion; graph events are replayed in forward
time (backward s descending). Each event consumes its own keyed random
stream derived from (seed, tier code, ordinal), starting with the
acceptance uniform u: the collision fires iff u * mass_bound < pair mass.
Initial states come from streams keyed by (seed, "init", particle id).

Because streams are keyed and not sequential, dropping a subset of events
(loops, extension events) leaves every other draw unchanged, which couples
the realization variants of one graph sample pathwise. For stochastic free
motion the coupling only holds in law between events, since advancing over
different segmentations consumes motion draws differently; the builtin
models all use deterministic motion.
"""

import math
from dataclasses import dataclass

import numpy as np

from ._jit import compile_kernel
from .seeding import derive_seed, spawn_rng
from .models import apply_jump

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class Realization:
    root_paths: np.ndarray  # (n_roots, n_times, d)
    query_times: tuple
    final_states: dict
    n_events: int
    n_accepted: int


def _replay(model, member_ids, events, horizon, query_times, seed, roots):
    qt = tuple(float(t) for t in query_times)
    if any(t < 0 or t > horizon for t in qt):
        raise ValueError("query times must lie in [0, horizon]")
    ordered = sorted(events, key=lambda e: -e.s)
    for a, b in zip(ordered, ordered[1:]):
        if b.s >= a.s:
            raise ValueError("events must have distinct times")

    states = {}
    last_t = {}
    motion_rng = {}
    deterministic = model.motion.deterministic
    for pid in member_ids:
        pid = int(pid)
        states[pid] = model.sample_initial(spawn_rng(seed, "init", pid))
        last_t[pid] = 0.0
        if not deterministic:
            motion_rng[pid] = spawn_rng(seed, "motion", pid)

    def advance(pid, t):
        if t > last_t[pid]:
            rng_m = None if deterministic else motion_rng[pid]
            states[pid] = model.motion.advance(states[pid], t - last_t[pid], rng_m)
            last_t[pid] = t

    roots = [int(r) for r in roots]
    out = np.empty((len(roots), len(qt), model.dimension))
    qi = 0
    n_acc = 0
    lam = model.kernel.mass_bound

    def flush(upto):
        nonlocal qi
        while qi < len(qt) and qt[qi] < upto:
            for k, r in enumerate(roots):
                advance(r, qt[qi])
                out[k, qi] = states[r]
            qi += 1

    for e in ordered:
        t = horizon - e.s
        flush(t)
        advance(e.r, t)
        advance(e.j, t)
        rng_e = spawn_rng(seed, "event", e.key[0], e.key[1])
        u = rng_e.random()
        m = model.kernel.mass(states[e.r], states[e.j])
        if m > lam * (1.0 + 1e-12):
            raise AssertionError("pair mass exceeds declared bound")
        if u * lam < m:
            zi, zj = apply_jump(model, states[e.r], states[e.j], rng_e)
            states[e.r] = zi
            states[e.j] = zj
            n_acc += 1
    flush(math.inf)
    for pid in states:
        advance(pid, horizon)
    return Realization(
        root_paths=out,
        query_times=qt,
        final_states=states,
        n_events=len(ordered),
        n_accepted=n_acc,
    )


def realize_system(graph, model, query_times, seed):
    """Roots of a finite graph realized as system particles."""
    _check_model(graph, model)
    return _replay(
        model,
        graph.member_ids,
        graph.events,
        graph.horizon,
        query_times,
        seed,
        roots=range(graph.q),
    )


def realize_branch_only(coupled, model, query_times, seed):
    """Loop-free realization of a coupled graph: every branch of both tiers
    is replayed, every loop is dropped. The roots become independent copies
    of the limit dynamics when no finite-size event is present."""
    _check_model(coupled, model)
    events = [e for e in coupled.events if e.kind == "branch"]
    return _replay(
        model,
        coupled.member_ids,
        events,
        coupled.horizon,
        query_times,
        seed,
        roots=range(coupled.q),
    )


def realize_cluster_block(coupled, model, n_lead, query_times, seed):
    """Realize only the first n_lead clusters of the finite tier.

    Keeps finite events whose source cluster is below n_lead and, for
    loops, whose partner cluster is too; members of later clusters are
    never instantiated. Shares the seed with realize_system so common
    events reproduce identical collisions.
    """
    _check_model(coupled, model)
    fin = coupled.finite
    if not 1 <= n_lead <= fin.q:
        raise ValueError("n_lead must be in 1..q")
    keep = fin.member_cluster < n_lead
    members = fin.member_ids[keep]
    events = [
        e
        for e in fin.events
        if e.cluster_r < n_lead and (e.kind == "branch" or e.cluster_j < n_lead)
    ]
    return _replay(
        model, members, events, fin.horizon, query_times, seed, roots=range(n_lead)
    )


def realize_pair_blocks(coupled, model, query_times, seed):
    """Realize the coupled graph keeping only loops internal to the cluster
    pairs (0,1), (2,3), ...; branches of both tiers are always kept."""
    _check_model(coupled, model)
    if coupled.q % 2 != 0:
        raise ValueError("pair-block realization needs even q")
    events = [
        e
        for e in coupled.events
        if e.kind == "branch" or (e.cluster_r // 2 == e.cluster_j // 2)
    ]
    return _replay(
        model,
        coupled.member_ids,
        events,
        coupled.horizon,
        query_times,
        seed,
        roots=range(coupled.q),
    )


def _check_model(graph, model):
    if abs(graph.lam - model.kernel.mass_bound) > 1e-12 * max(1.0, graph.lam):
        raise ValueError("graph rate does not match the model's mass bound")


# ---------------------------------------------------------------------------
# Limit objects: Yule trees, cross loops, and their realization.


def _yule_tree_raw_impl(rng, lam, horizon):
    """Birth times and parent indices of one Yule tree on [0, horizon].
    Draw order per birth: waiting exponential, then parent index."""
    cap = 16
    b = np.empty(cap, np.float64)
    p = np.empty(cap, np.int64)
    b[0] = 0.0
    p[0] = -1
    k = 1
    t = 0.0
    while True:
        t += rng.exponential() / (lam * k)
        if t >= horizon:
            break
        if k == cap:
            nb = np.empty(cap * 2, np.float64)
            nb[:cap] = b
            b = nb
            npa = np.empty(cap * 2, np.int64)
            npa[:cap] = p
            p = npa
            cap *= 2
        b[k] = t
        p[k] = int(rng.integers(0, k))
        k += 1
    return b[:k].copy(), p[:k].copy()


_yule_tree_raw = compile_kernel(_yule_tree_raw_impl)


@dataclass(frozen=True)
class YuleTree:
    horizon: float
    birth_s: np.ndarray  # backward birth times, birth_s[0] == 0 (the root)
    parents: np.ndarray  # parents[0] == -1

    @property
    def size(self):
        return int(self.birth_s.shape[0])

    def size_at(self, s):
        """Members present at backward time s (right-continuous)."""
        return int(np.searchsorted(self.birth_s, s, side="right"))

    def rate_path(self, scale=1.0):
        from .clocks import RatePath

        sizes = np.arange(1, self.size + 1, dtype=float) * scale
        return RatePath(times=tuple(self.birth_s), values=tuple(sizes))


def sample_yule_tree(lam, horizon, rng):
    if lam <= 0 or horizon < 0:
        raise ValueError("need lam > 0 and horizon >= 0")
    b, p = _yule_tree_raw(rng, lam, horizon)
    return YuleTree(horizon=horizon, birth_s=b, parents=p)


@dataclass(frozen=True)
class CrossLoop:
    s: float
    a: int  # member index in the first tree
    b: int  # member index in the second tree
    weight: float  # lam * integral of the size product over [0, horizon]


def sample_cross_loop(tree1, tree2, lam, horizon, rng):
    """One loop between two trees at time density proportional to the
    product of their sizes; endpoints uniform among members present.
    Draw order: location uniform, then endpoint a, then endpoint b."""
    prod = tree1.rate_path(lam).product(tree2.rate_path(1.0))
    weight = prod.integral(horizon)
    u = rng.random()
    s = prod.inverse_integral(u * weight, horizon)
    a = int(rng.integers(0, tree1.size_at(s)))
    b = int(rng.integers(0, tree2.size_at(s)))
    return CrossLoop(s=float(s), a=a, b=b, weight=float(weight))


class _TreeEvent:
    """Minimal stand-in for GraphEvent inside limit realizations."""

    __slots__ = ("s", "kind", "r", "j", "key")

    def __init__(self, s, kind, r, j, key):
        self.s = s
        self.kind = kind
        self.r = r
        self.j = j
        self.key = key


def _tree_events(tree, tree_idx, stride, offset):
    events = []
    for m in range(1, tree.size):
        events.append(
            _TreeEvent(
                s=float(tree.birth_s[m]),
                kind="branch",
                r=int(tree.parents[m]) * stride + offset,
                j=m * stride + offset,
                key=(2 + tree_idx, m),
            )
        )
    return events


def realize_limit_single(model, tree, query_times, seed):
    """Root path of one realized Yule tree, shape (n_times, d)."""
    events = _tree_events(tree, 0, 1, 0)
    members = np.arange(tree.size, dtype=np.int64)
    real = _replay(model, members, events, tree.horizon, query_times, seed, roots=(0,))
    return real.root_paths[0]


@dataclass(frozen=True)
class LimitPairRealization:
    with_loop: np.ndarray  # (2, n_times, d) root paths
    without_loop: np.ndarray
    weight: float


def realize_limit_pair(model, tree1, tree2, loop, query_times, seed):
    """Two realized trees sharing one cross loop, next to the same trees
    with the loop removed. All other draws are shared, so the difference
    isolates the loop's effect."""
    if tree1.horizon != tree2.horizon:
        raise ValueError("trees must share a horizon")
    base = _tree_events(tree1, 0, 2, 0) + _tree_events(tree2, 1, 2, 1)
    members = np.concatenate(
        [
            np.arange(tree1.size, dtype=np.int64) * 2,
            np.arange(tree2.size, dtype=np.int64) * 2 + 1,
        ]
    )
    loop_event = _TreeEvent(
        s=loop.s, kind="loop", r=loop.a * 2, j=loop.b * 2 + 1, key=(9, 0)
    )
    with_loop = _replay(
        model, members, base + [loop_event], tree1.horizon, query_times, seed, roots=(0, 1)
    )
    without = _replay(
        model, members, base, tree1.horizon, query_times, seed, roots=(0, 1)
    )
    return LimitPairRealization(
        with_loop=with_loop.root_paths,
        without_loop=without.root_paths,
        weight=loop.weight,
    )


# ---------------------------------------------------------------------------
# Compiled Kac limit kernels.


def _kac_pair_replay_impl(
    b1, p1, b2, p2, init1, init2, th1, th2, use_loop, s_loop, a, b, th_loop,
    horizon, qt, out, row,
):
    """Replay two Kac trees (optionally with the cross loop) writing the two
    root paths into out[row] and out[row+1]."""
    k1 = b1.shape[0]
    k2 = b2.shape[0]
    n_ev = (k1 - 1) + (k2 - 1) + (1 if use_loop else 0)
    s_all = np.empty(n_ev, np.float64)
    code = np.empty(n_ev, np.int64)
    ia = np.empty(n_ev, np.int64)
    ib = np.empty(n_ev, np.int64)
    idx = 0
    for m in range(1, k1):
        s_all[idx] = b1[m]
        code[idx] = 0
        ia[idx] = p1[m]
        ib[idx] = m
        idx += 1
    for m in range(1, k2):
        s_all[idx] = b2[m]
        code[idx] = 1
        ia[idx] = p2[m]
        ib[idx] = m
        idx += 1
    if use_loop:
        s_all[idx] = s_loop
        code[idx] = 2
        ia[idx] = a
        ib[idx] = b
        idx += 1
    order = np.argsort(s_all)

    x1 = init1.copy()
    x2 = init2.copy()
    nq = qt.shape[0]
    qi = 0
    for oi in range(n_ev - 1, -1, -1):
        e = order[oi]
        t = horizon - s_all[e]
        while qi < nq and qt[qi] < t:
            out[row, qi] = x1[0]
            out[row + 1, qi] = x2[0]
            qi += 1
        c_code = code[e]
        if c_code == 0:
            th = th1[ib[e] - 1]
            c = math.cos(th)
            sn = math.sin(th)
            v = x1[ia[e]]
            w = x1[ib[e]]
            x1[ia[e]] = v * c - w * sn
            x1[ib[e]] = v * sn + w * c
        elif c_code == 1:
            th = th2[ib[e] - 1]
            c = math.cos(th)
            sn = math.sin(th)
            v = x2[ia[e]]
            w = x2[ib[e]]
            x2[ia[e]] = v * c - w * sn
            x2[ib[e]] = v * sn + w * c
        else:
            c = math.cos(th_loop)
            sn = math.sin(th_loop)
            v = x1[ia[e]]
            w = x2[ib[e]]
            x1[ia[e]] = v * c - w * sn
            x2[ib[e]] = v * sn + w * c
    while qi < nq:
        out[row, qi] = x1[0]
        out[row + 1, qi] = x2[0]
        qi += 1


def _kac_limit_pair_impl(rng, lam, horizon, qt):
    """One replica of the coupled limit pair for the Kac model.

    Returns (weight, out) with out rows: with-loop roots 1 and 2, then
    no-loop roots 1 and 2, each of length len(qt). Draw order: tree 1,
    tree 2, loop location uniform, endpoint a, endpoint b, initials of
    tree 1 then tree 2, rotation angles of tree 1 then tree 2, loop angle.
    """
    b1, p1 = _yule_tree_raw(rng, lam, horizon)
    b2, p2 = _yule_tree_raw(rng, lam, horizon)
    k1 = b1.shape[0]
    k2 = b2.shape[0]

    # piecewise-constant size product over backward time
    n_seg = k1 + k2 - 1
    seg_start = np.empty(n_seg, np.float64)
    seg_rate = np.empty(n_seg, np.float64)
    i1 = 1
    i2 = 1
    cur = 0
    t0 = 0.0
    while True:
        seg_start[cur] = t0
        seg_rate[cur] = float(i1) * float(i2)
        nxt1 = b1[i1] if i1 < k1 else np.inf
        nxt2 = b2[i2] if i2 < k2 else np.inf
        nxt = nxt1 if nxt1 < nxt2 else nxt2
        if nxt >= horizon:
            break
        if nxt1 < nxt2:
            i1 += 1
        else:
            i2 += 1
        t0 = nxt
        cur += 1
    n_seg = cur + 1
    total = 0.0
    for i in range(n_seg):
        end = seg_start[i + 1] if i + 1 < n_seg else horizon
        total += seg_rate[i] * (end - seg_start[i])
    weight = lam * total

    target = rng.random() * total
    s_loop = horizon
    acc = 0.0
    for i in range(n_seg):
        end = seg_start[i + 1] if i + 1 < n_seg else horizon
        block = seg_rate[i] * (end - seg_start[i])
        if acc + block >= target:
            s_loop = seg_start[i] + (target - acc) / seg_rate[i]
            break
        acc += block
    n1 = np.searchsorted(b1, s_loop, side="right")
    n2 = np.searchsorted(b2, s_loop, side="right")
    a = int(rng.integers(0, n1))
    b = int(rng.integers(0, n2))

    init1 = np.empty(k1)
    for i in range(k1):
        init1[i] = rng.standard_normal()
    init2 = np.empty(k2)
    for i in range(k2):
        init2[i] = rng.standard_normal()
    th1 = np.empty(k1 - 1)
    for i in range(k1 - 1):
        th1[i] = rng.random() * TWO_PI
    th2 = np.empty(k2 - 1)
    for i in range(k2 - 1):
        th2[i] = rng.random() * TWO_PI
    th_loop = rng.random() * TWO_PI

    nq = qt.shape[0]
    out = np.empty((4, nq))
    _kac_pair_replay(
        b1, p1, b2, p2, init1, init2, th1, th2, True, s_loop, a, b, th_loop,
        horizon, qt, out, 0,
    )
    _kac_pair_replay(
        b1, p1, b2, p2, init1, init2, th1, th2, False, s_loop, a, b, th_loop,
        horizon, qt, out, 2,
    )
    return weight, out


def _kac_marginal_batch_impl(rng, n, lam, horizon, qt):
    """n iid Kac limit root paths, shape (n, len(qt)). One shared stream;
    per replica: tree, initials, angles, replayed in forward order."""
    nq = qt.shape[0]
    out = np.empty((n, nq))
    scratch = np.empty((2, nq))
    empty_b = np.empty(1, np.float64)
    empty_p = np.empty(1, np.int64)
    empty_b[0] = 0.0
    empty_p[0] = -1
    for rep in range(n):
        b1, p1 = _yule_tree_raw(rng, lam, horizon)
        k1 = b1.shape[0]
        init1 = np.empty(k1)
        for i in range(k1):
            init1[i] = rng.standard_normal()
        init2 = np.empty(1)
        init2[0] = 0.0
        th1 = np.empty(k1 - 1)
        for i in range(k1 - 1):
            th1[i] = rng.random() * TWO_PI
        th2 = np.empty(0)
        _kac_pair_replay(
            b1, p1, empty_b, empty_p, init1, init2, th1, th2, False, 0.0, 0, 0,
            0.0, horizon, qt, scratch, 0,
        )
        out[rep] = scratch[0]
    return out


_kac_pair_replay = compile_kernel(_kac_pair_replay_impl)
_kac_limit_pair = compile_kernel(_kac_limit_pair_impl)
_kac_marginal_batch = compile_kernel(_kac_marginal_batch_impl)


def marginal_paths(model, n, horizon, query_times, seed):
    """n iid limit marginal paths, shape (n, n_times, d)."""
    qt = np.asarray(query_times, dtype=float)
    if model.fast == "kac":
        rng = spawn_rng(seed, "marginal")
        out = _kac_marginal_batch(rng, n, model.params["lam"], horizon, qt)
        return out[:, :, None].copy()
    if model.fast == "toy":
        return _toy_marginal(model, n, horizon, qt, seed)
    lam = model.kernel.mass_bound
    out = np.empty((n, qt.size, model.dimension))
    for rep in range(n):
        rng = spawn_rng(seed, "marginal", rep)
        tree = sample_yule_tree(lam, horizon, rng)
        out[rep] = realize_limit_single(
            model, tree, tuple(qt), derive_seed(seed, "marginal-replay", rep)
        )
    return out


def _toy_marginal(model, n, horizon, qt, seed):
    """Limit marginal of the linear toy model: a compound Poisson path.

    In the large-N limit each particle accumulates one-sided jumps at rate
    jump_rate; the partner plays no role, so the marginal is sampled
    directly without trees.
    """
    p = model.params
    rng = spawn_rng(seed, "marginal")
    out = np.empty((n, qt.size, 1))
    x0 = p["mean0"] + p["sd0"] * rng.standard_normal(n)
    counts = rng.poisson(p["jump_rate"] * horizon, size=(n,))
    for rep in range(n):
        c = int(counts[rep])
        times = np.sort(rng.random(c)) * horizon
        jumps = p["mean_jump"] + p["sd_jump"] * rng.standard_normal(c)
        cum = np.concatenate([[0.0], np.cumsum(jumps)])
        idx = np.searchsorted(times, qt, side="right")
        out[rep, :, 0] = x0[rep] + cum[idx]
    return out
