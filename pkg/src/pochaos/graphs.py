"""Backward interaction graphs.

Starting from q root particles at the horizon and running a backward clock
s in [0, T], the graph grows by two kinds of events:

* branch: a current member r recruits a fresh particle j from outside the
  union; j joins r's cluster. Rate lam*K*(N-K)+/(N-1) with K the union size.
* loop: an ordered pair of distinct current members is marked, the union
  does not change. Rate lam*K*(K-1)/(2*(N-1)).

Clusters are assigned at entry and never merge; loop events record the
cluster labels of both endpoints. The coupled builder adds an extension
tier on an independent stream so that the union grows at the pure birth
rate lam*Ktilde and the loop intensity matches the infinite-system one;
removing every extension event recovers the finite graph bit for bit.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._jit import compile_kernel
from .clocks import ClusterSizePaths, DuplicateTimeError

KIND_BRANCH = 0
KIND_LOOP = 1
TIER_FINITE = 0
TIER_EXTENSION = 1

_KIND_NAMES = {KIND_BRANCH: "branch", KIND_LOOP: "loop"}
_TIER_NAMES = {TIER_FINITE: "finite", TIER_EXTENSION: "extension"}
_SUBCASE_NAMES = {
    0: None,
    1: "source-old",  # extension branch recruited by a finite-union member
    2: "source-new",  # extension branch recruited by an extension member
    3: "pair-new-any",  # extension loop: new endpoint plus any other member
    4: "pair-new-old",  # extension loop: new endpoint plus finite-union member
}


@dataclass(frozen=True)
class GraphEvent:
    s: float  # backward time, 0 at the horizon
    t: float  # forward time, horizon - s
    kind: str  # "branch" | "loop"
    tier: str  # "finite" | "extension"
    r: int  # existing member (branch source / first loop endpoint)
    j: int  # recruited particle (branch) or second loop endpoint
    cluster_r: int
    cluster_j: int
    subcase: Optional[str]
    key: tuple  # (tier code, ordinal) - stable identity for coupled replay


def _grow_f8(a):
    b = np.empty(a.shape[0] * 2, np.float64)
    b[: a.shape[0]] = a
    return b


def _grow_i8(a):
    b = np.empty(a.shape[0] * 2, np.int64)
    b[: a.shape[0]] = a
    return b


_grow_f8 = compile_kernel(_grow_f8)
_grow_i8 = compile_kernel(_grow_i8)


def _finite_graph_impl(rng, q, n, lam, horizon):
    """Backward finite-system graph. Returns event arrays (s, kind, r, j,
    cluster_r, cluster_j) plus member arrays (ids, cluster, birth) in order
    of entry (roots first)."""
    ids = np.empty(n, np.int64)
    cluster = np.empty(n, np.int64)
    birth = np.empty(n, np.float64)
    in_union = np.zeros(n, np.bool_)
    for i in range(q):
        ids[i] = i
        cluster[i] = i
        birth[i] = 0.0
        in_union[i] = True
    k = q

    cap = 64
    ev_s = np.empty(cap, np.float64)
    ev_kind = np.empty(cap, np.int64)
    ev_r = np.empty(cap, np.int64)
    ev_j = np.empty(cap, np.int64)
    ev_cr = np.empty(cap, np.int64)
    ev_cj = np.empty(cap, np.int64)
    m = 0

    s = 0.0
    while True:
        free = n - k
        if free < 0:
            free = 0
        rb = lam * k * free / (n - 1.0)
        rl = lam * k * (k - 1.0) / (2.0 * (n - 1.0))
        total = rb + rl
        if total <= 0.0:
            break
        s += rng.exponential() / total
        if s >= horizon:
            break
        if m == cap:
            ev_s = _grow_f8(ev_s)
            ev_kind = _grow_i8(ev_kind)
            ev_r = _grow_i8(ev_r)
            ev_j = _grow_i8(ev_j)
            ev_cr = _grow_i8(ev_cr)
            ev_cj = _grow_i8(ev_cj)
            cap *= 2
        u = rng.random() * total
        if u < rb:
            ridx = int(rng.integers(0, k))
            r = ids[ridx]
            cr = cluster[ridx]
            while True:
                j = int(rng.integers(0, n))
                if not in_union[j]:
                    break
            ids[k] = j
            cluster[k] = cr
            birth[k] = s
            in_union[j] = True
            k += 1
            ev_s[m] = s
            ev_kind[m] = 0
            ev_r[m] = r
            ev_j[m] = j
            ev_cr[m] = cr
            ev_cj[m] = cr
        else:
            ridx = int(rng.integers(0, k))
            jidx = int(rng.integers(0, k - 1))
            if jidx >= ridx:
                jidx += 1
            ev_s[m] = s
            ev_kind[m] = 1
            ev_r[m] = ids[ridx]
            ev_j[m] = ids[jidx]
            ev_cr[m] = cluster[ridx]
            ev_cj[m] = cluster[jidx]
        m += 1
    return (
        ev_s[:m].copy(),
        ev_kind[:m].copy(),
        ev_r[:m].copy(),
        ev_j[:m].copy(),
        ev_cr[:m].copy(),
        ev_cj[:m].copy(),
        ids[:k].copy(),
        cluster[:k].copy(),
        birth[:k].copy(),
    )


def _extension_impl(rng, q, n, lam, horizon, fin_s, fin_kind, fin_ids, fin_cluster):
    """Extension tier over a fixed finite graph. Walks the finite event
    schedule; on every segment draws fresh exponential clocks for the two
    extension channels at their current rate differences. Extension members
    get ids n, n+1, ... in order of creation."""
    n_fin_ev = fin_s.shape[0]
    cap = 32
    ev_s = np.empty(cap, np.float64)
    ev_kind = np.empty(cap, np.int64)
    ev_r = np.empty(cap, np.int64)
    ev_j = np.empty(cap, np.int64)
    ev_cr = np.empty(cap, np.int64)
    ev_cj = np.empty(cap, np.int64)
    ev_sub = np.empty(cap, np.int64)
    n_ev = 0

    capm = 16
    ext_cluster = np.empty(capm, np.int64)
    ext_birth = np.empty(capm, np.float64)
    m = 0  # extension members

    k = q  # finite union size
    fin_ptr = 0
    s = 0.0
    while True:
        if fin_ptr < n_fin_ev:
            s_fin = fin_s[fin_ptr]
        else:
            s_fin = np.inf
        kt = float(k + m)
        free = n - k
        if free < 0:
            free = 0
        dk = lam * k * free / (n - 1.0)
        rb_ext = lam * kt - dk
        rl_ext = lam * (kt * (kt - 1.0) - k * (k - 1.0)) / (2.0 * (n - 1.0))
        if rb_ext < -1e-9 or rl_ext < -1e-9:
            raise ValueError("extension rate went negative; domination violated")
        if rb_ext < 0.0:
            rb_ext = 0.0
        if rl_ext < 0.0:
            rl_ext = 0.0
        if rb_ext > 0.0:
            e_b = s + rng.exponential() / rb_ext
        else:
            e_b = np.inf
        if rl_ext > 0.0:
            e_l = s + rng.exponential() / rl_ext
        else:
            e_l = np.inf
        if e_b < e_l:
            s_ext = e_b
        else:
            s_ext = e_l
        if s_fin <= s_ext:
            if s_fin == s_ext:
                raise ValueError("tied event times across tiers")
            s = s_fin
            if fin_kind[fin_ptr] == 0:
                k += 1
            fin_ptr += 1
            continue
        if s_ext >= horizon:
            break
        if e_b == e_l:
            raise ValueError("tied extension event times")
        s = s_ext
        if n_ev == cap:
            ev_s = _grow_f8(ev_s)
            ev_kind = _grow_i8(ev_kind)
            ev_r = _grow_i8(ev_r)
            ev_j = _grow_i8(ev_j)
            ev_cr = _grow_i8(ev_cr)
            ev_cj = _grow_i8(ev_cj)
            ev_sub = _grow_i8(ev_sub)
            cap *= 2
        if e_b < e_l:
            # extension branch; sub-case by recruiting side
            p_old = (lam * k - dk) / rb_ext
            u = rng.random()
            if u < p_old:
                ridx = int(rng.integers(0, k))
                r = fin_ids[ridx]
                cr = fin_cluster[ridx]
                sub = 1
            else:
                ridx = int(rng.integers(0, m))
                r = n + ridx
                cr = ext_cluster[ridx]
                sub = 2
            if m == capm:
                ext_cluster = _grow_i8(ext_cluster)
                ext_birth = _grow_f8(ext_birth)
                capm *= 2
            j = n + m
            ext_cluster[m] = cr
            ext_birth[m] = s
            m += 1
            ev_s[n_ev] = s
            ev_kind[n_ev] = 0
            ev_r[n_ev] = r
            ev_j[n_ev] = j
            ev_cr[n_ev] = cr
            ev_cj[n_ev] = cr
            ev_sub[n_ev] = sub
        else:
            # extension loop: at least one endpoint is an extension member
            d = kt * (kt - 1.0) - k * (k - 1.0)
            p_any = m * (kt - 1.0) / d
            u = rng.random()
            ridx = int(rng.integers(0, m))
            r = n + ridx
            cr = ext_cluster[ridx]
            if u < p_any:
                jidx = int(rng.integers(0, k + m - 1))
                if jidx < k:
                    j = fin_ids[jidx]
                    cj = fin_cluster[jidx]
                else:
                    pos = jidx - k
                    if pos >= ridx:
                        pos += 1
                    j = n + pos
                    cj = ext_cluster[pos]
                sub = 3
            else:
                jidx = int(rng.integers(0, k))
                j = fin_ids[jidx]
                cj = fin_cluster[jidx]
                sub = 4
            ev_s[n_ev] = s
            ev_kind[n_ev] = 1
            ev_r[n_ev] = r
            ev_j[n_ev] = j
            ev_cr[n_ev] = cr
            ev_cj[n_ev] = cj
            ev_sub[n_ev] = sub
        n_ev += 1
    return (
        ev_s[:n_ev].copy(),
        ev_kind[:n_ev].copy(),
        ev_r[:n_ev].copy(),
        ev_j[:n_ev].copy(),
        ev_cr[:n_ev].copy(),
        ev_cj[:n_ev].copy(),
        ev_sub[:n_ev].copy(),
        ext_cluster[:m].copy(),
        ext_birth[:m].copy(),
    )


_finite_graph = compile_kernel(_finite_graph_impl)
_extension = compile_kernel(_extension_impl)


def _make_events(horizon, tier_code, arrays):
    events = []
    if len(arrays) == 6:
        s_arr, kind, r, j, cr, cj = arrays
        sub = np.zeros(s_arr.shape[0], np.int64)
    else:
        s_arr, kind, r, j, cr, cj, sub = arrays
    for i in range(s_arr.shape[0]):
        events.append(
            GraphEvent(
                s=float(s_arr[i]),
                t=float(horizon - s_arr[i]),
                kind=_KIND_NAMES[int(kind[i])],
                tier=_TIER_NAMES[tier_code],
                r=int(r[i]),
                j=int(j[i]),
                cluster_r=int(cr[i]),
                cluster_j=int(cj[i]),
                subcase=_SUBCASE_NAMES[int(sub[i])],
                key=(tier_code, i),
            )
        )
    return events


def _check_graph_args(q, n_particles, lam, horizon):
    if q < 1:
        raise ValueError("need at least one root")
    if n_particles < max(q, 2):
        raise ValueError("need n_particles >= max(q, 2)")
    if lam <= 0:
        raise ValueError("lam must be positive")
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")


@dataclass(frozen=True)
class InteractionGraph:
    n_particles: int
    q: int
    lam: float
    horizon: float
    events: tuple
    member_ids: np.ndarray
    member_cluster: np.ndarray
    member_birth: np.ndarray

    @property
    def n_members(self):
        return int(self.member_ids.shape[0])

    @property
    def n_loops(self):
        return sum(1 for e in self.events if e.kind == "loop")

    @property
    def n_branches(self):
        return sum(1 for e in self.events if e.kind == "branch")

    def cluster_sizes(self):
        return np.bincount(self.member_cluster, minlength=self.q)

    def size_paths(self):
        """Per-cluster growth as a ClusterSizePaths over backward time."""
        jumps = [[] for _ in range(self.q)]
        for e in self.events:
            if e.kind == "branch":
                jumps[e.cluster_r].append(e.s)
        return ClusterSizePaths(
            horizon=self.horizon, jump_times=tuple(tuple(j) for j in jumps)
        )

    def loop_count_path(self):
        """Cumulative loop count over backward time: (times, counts)."""
        times = [e.s for e in self.events if e.kind == "loop"]
        return np.array(times), np.arange(1, len(times) + 1)

    def export_records(self):
        return [
            {
                "s": e.s,
                "t": e.t,
                "kind": e.kind,
                "tier": e.tier,
                "r": e.r,
                "j": e.j,
                "cluster_r": e.cluster_r,
                "cluster_j": e.cluster_j,
                "subcase": e.subcase,
            }
            for e in self.events
        ]

    def validate(self):
        """Hard structural checks; raises AssertionError on violation."""
        ids = self.member_ids
        assert len(set(ids.tolist())) == ids.shape[0], "duplicate member ids"
        assert all(ids[i] == i for i in range(self.q)), "roots must be 0..q-1"
        assert int(self.cluster_sizes().sum()) == self.n_members
        k = self.q
        last = 0.0
        for e in self.events:
            assert e.s > last, "event times must strictly increase"
            last = e.s
            if e.kind == "branch" and e.tier == "finite":
                assert k < self.n_particles, "branch with full union"
                k += 1
        assert k == len([i for i in ids if i < self.n_particles])


@dataclass(frozen=True)
class CoupledGraphs:
    """Finite graph plus its extension tier, built on independent streams.

    `events` merges both tiers by backward time. Member arrays cover finite
    members followed by extension members (ids n_particles, n_particles+1,
    ... in creation order). Dropping every extension event recovers
    `finite` exactly.
    """

    finite: InteractionGraph
    events: tuple
    n_particles: int
    q: int
    lam: float
    horizon: float
    member_ids: np.ndarray
    member_cluster: np.ndarray
    member_birth: np.ndarray

    @property
    def n_members_total(self):
        return int(self.member_ids.shape[0])

    @property
    def n_loops_total(self):
        return sum(1 for e in self.events if e.kind == "loop")

    @property
    def n_extension_events(self):
        return sum(1 for e in self.events if e.tier == "extension")

    def cluster_sizes(self):
        return np.bincount(self.member_cluster, minlength=self.q)

    def size_paths(self):
        jumps = [[] for _ in range(self.q)]
        for e in self.events:
            if e.kind == "branch":
                jumps[e.cluster_r].append(e.s)
        return ClusterSizePaths(
            horizon=self.horizon, jump_times=tuple(tuple(j) for j in jumps)
        )

    def export_records(self):
        return [
            {
                "s": e.s,
                "t": e.t,
                "kind": e.kind,
                "tier": e.tier,
                "r": e.r,
                "j": e.j,
                "cluster_r": e.cluster_r,
                "cluster_j": e.cluster_j,
                "subcase": e.subcase,
            }
            for e in self.events
        ]


def build_graph(q, n_particles, lam, horizon, rng):
    """Sample a finite-system backward graph with q roots."""
    _check_graph_args(q, n_particles, lam, horizon)
    arrays = _finite_graph(rng, q, n_particles, lam, horizon)
    events = _make_events(horizon, TIER_FINITE, arrays[:6])
    return InteractionGraph(
        n_particles=n_particles,
        q=q,
        lam=lam,
        horizon=horizon,
        events=tuple(events),
        member_ids=arrays[6],
        member_cluster=arrays[7],
        member_birth=arrays[8],
    )


def coupled_child_seeds(rng):
    """Child stream seeds used by build_coupled, drawn from the caller's
    generator: finite stream first, extension stream second."""
    s_fin = int(rng.integers(0, 2**63))
    s_ext = int(rng.integers(0, 2**63))
    return s_fin, s_ext


def build_coupled(q, n_particles, lam, horizon, rng):
    """Sample a coupled pair (finite graph, extension tier).

    The finite tier consumes a dedicated child stream, so it is
    distributed exactly as build_graph; the extension tier rides a second
    stream and never perturbs the finite draws.
    """
    _check_graph_args(q, n_particles, lam, horizon)
    s_fin, s_ext = coupled_child_seeds(rng)
    rng_fin = np.random.default_rng(s_fin)
    rng_ext = np.random.default_rng(s_ext)
    fin_arrays = _finite_graph(rng_fin, q, n_particles, lam, horizon)
    fin_events = _make_events(horizon, TIER_FINITE, fin_arrays[:6])
    finite = InteractionGraph(
        n_particles=n_particles,
        q=q,
        lam=lam,
        horizon=horizon,
        events=tuple(fin_events),
        member_ids=fin_arrays[6],
        member_cluster=fin_arrays[7],
        member_birth=fin_arrays[8],
    )
    ext_arrays = _extension(
        rng_ext,
        q,
        n_particles,
        lam,
        horizon,
        fin_arrays[0],
        fin_arrays[1],
        fin_arrays[6],
        fin_arrays[7],
    )
    ext_events = _make_events(horizon, TIER_EXTENSION, ext_arrays[:7])
    merged = sorted(fin_events + ext_events, key=lambda e: e.s)
    for a, b in zip(merged, merged[1:]):
        if b.s <= a.s:
            raise DuplicateTimeError("coincident events across tiers")
    ext_m = ext_arrays[7].shape[0]
    member_ids = np.concatenate(
        [fin_arrays[6], n_particles + np.arange(ext_m, dtype=np.int64)]
    )
    member_cluster = np.concatenate([fin_arrays[7], ext_arrays[7]])
    member_birth = np.concatenate([fin_arrays[8], ext_arrays[8]])
    return CoupledGraphs(
        finite=finite,
        events=tuple(merged),
        n_particles=n_particles,
        q=q,
        lam=lam,
        horizon=horizon,
        member_ids=member_ids,
        member_cluster=member_cluster,
        member_birth=member_birth,
    )


@dataclass(frozen=True)
class EventFlags:
    """Classification of a coupled graph's events by cluster and block.

    A block (i, j) is the contiguous cluster range i..j inclusive. An event
    belongs to the block when its source cluster lies in the range and, for
    loops, the partner cluster does too. An event touches cluster l when
    either recorded cluster label equals l (branches touch only their
    source cluster).
    """

    q: int
    clean_clusters: tuple  # per cluster: every touching event is a finite branch
    branch_only_clusters: tuple  # per cluster: no loop touches it (any tier)
    block_clean: dict  # (i, j) -> tuple over l in i..j of the restricted flag
    block_all_dirty: dict  # (i, j) -> True when no cluster in the block is clean
    block_has_extension_branch: dict
    block_loops: dict  # (i, j) -> loops with both endpoints inside the block
    cross_loops: dict  # (i, j), i < j -> loops joining cluster i to cluster j
    pair_blocks_single_loop: bool  # even q: each block (2b, 2b+1) holds exactly one loop
    n_loops_finite: int
    n_loops_total: int


def detect_events(coupled):
    """Compute the per-cluster and per-block event flags used by the
    expansion and covariance estimators."""
    q = coupled.q
    events = coupled.events

    def touches(e, l):
        return e.cluster_r == l or (e.kind == "loop" and e.cluster_j == l)

    def is_clean(e):
        return e.kind == "branch" and e.tier == "finite"

    clean = tuple(
        all(is_clean(e) for e in events if touches(e, l)) for l in range(q)
    )
    branch_only = tuple(
        all(e.kind == "branch" for e in events if touches(e, l)) for l in range(q)
    )

    block_clean = {}
    block_all_dirty = {}
    block_ext_branch = {}
    block_loops = {}
    for i in range(q):
        for j in range(i, q):
            rng_set = range(i, j + 1)

            def in_block(e):
                if e.cluster_r < i or e.cluster_r > j:
                    return False
                if e.kind == "loop" and (e.cluster_j < i or e.cluster_j > j):
                    return False
                return True

            blk = [e for e in events if in_block(e)]
            flags = tuple(
                all(is_clean(e) for e in blk if touches(e, l)) for l in rng_set
            )
            block_clean[(i, j)] = flags
            block_all_dirty[(i, j)] = not any(flags)
            block_ext_branch[(i, j)] = any(
                e.kind == "branch" and e.tier == "extension" for e in blk
            )
            block_loops[(i, j)] = sum(1 for e in blk if e.kind == "loop")

    cross = {}
    for i in range(q):
        for j in range(i + 1, q):
            cross[(i, j)] = sum(
                1
                for e in events
                if e.kind == "loop"
                and {e.cluster_r, e.cluster_j} == {i, j}
            )

    pair_ok = False
    if q % 2 == 0:
        n_loops_total = sum(1 for e in events if e.kind == "loop")
        pair_ok = n_loops_total == q // 2 and all(
            block_loops[(2 * b, 2 * b + 1)] == 1 for b in range(q // 2)
        )

    return EventFlags(
        q=q,
        clean_clusters=clean,
        branch_only_clusters=branch_only,
        block_clean=block_clean,
        block_all_dirty=block_all_dirty,
        block_has_extension_branch=block_ext_branch,
        block_loops=block_loops,
        cross_loops=cross,
        pair_blocks_single_loop=pair_ok,
        n_loops_finite=coupled.finite.n_loops,
        n_loops_total=sum(1 for e in events if e.kind == "loop"),
    )
