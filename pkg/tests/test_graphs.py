import math

import numpy as np
import pytest

from pochaos.graphs import (
    build_coupled,
    build_graph,
    coupled_child_seeds,
    detect_events,
)
from pochaos.seeding import spawn_rng
from pochaos.stats import graph_count_summary


def test_build_graph_validation():
    rng = spawn_rng(1)
    with pytest.raises(ValueError):
        build_graph(0, 10, 1.0, 1.0, rng)
    with pytest.raises(ValueError):
        build_graph(3, 2, 1.0, 1.0, rng)
    with pytest.raises(ValueError):
        build_graph(2, 10, 0.0, 1.0, rng)
    with pytest.raises(ValueError):
        build_graph(2, 10, 1.0, -1.0, rng)


def test_build_graph_structure():
    rng = spawn_rng(2, "structure")
    for q, n, lam, horizon in ((1, 5, 1.0, 1.0), (2, 10, 0.7, 1.5), (4, 8, 2.0, 0.5)):
        for _ in range(50):
            g = build_graph(q, n, lam, horizon, rng)
            g.validate()
            assert g.n_members <= n
            assert np.array_equal(g.member_ids[:q], np.arange(q))
            assert int(g.cluster_sizes().sum()) == g.n_members
            last = 0.0
            for e in g.events:
                assert 0 < e.s < horizon
                assert e.s > last
                last = e.s
                assert math.isclose(e.t, horizon - e.s)
                assert e.kind in ("branch", "loop")
                assert e.tier == "finite"
                assert 0 <= e.cluster_r < q and 0 <= e.cluster_j < q
            assert g.n_branches + g.n_loops == len(g.events)
            assert g.n_members == q + g.n_branches


def test_build_graph_deterministic():
    a = build_graph(2, 10, 1.0, 1.0, spawn_rng(3))
    b = build_graph(2, 10, 1.0, 1.0, spawn_rng(3))
    assert a.export_records() == b.export_records()
    assert np.array_equal(a.member_ids, b.member_ids)


def test_no_event_probability():
    # two roots in a 10-particle system: branch rate 2*8/9, loop rate 1/9,
    # so P(no event on [0,1]) = exp(-17/9)
    q, n, lam, horizon = 2, 10, 1.0, 1.0
    reps = 40000
    loops, members = graph_count_summary(q, n, lam, horizon, reps, master_seed=4)
    none = float(np.mean((members == q) & (loops == 0)))
    p = math.exp(-17.0 / 9.0)
    se = math.sqrt(p * (1 - p) / reps)
    assert abs(none - p) < 3 * se


def test_single_root_branch_rate():
    # one root in a huge system branches at essentially rate lam, so the
    # first split time is nearly exponential: P(no branch) = exp(-lam T)
    q, n, lam, horizon = 1, 10_000, 1.3, 1.0
    reps = 20000
    loops, members = graph_count_summary(q, n, lam, horizon, reps, master_seed=5)
    none = float(np.mean((members == 1) & (loops == 0)))
    # finite-size correction: rate lam * (n-1)/(n-1) at size 1... the size-1
    # cluster has branch rate lam * 1 * (n-1)/(n-1) = lam and no loop
    p = math.exp(-lam * horizon)
    se = math.sqrt(p * (1 - p) / reps)
    assert abs(none - p) < 3 * se


def test_loop_count_path_monotone():
    rng = spawn_rng(6)
    g = build_graph(4, 6, 2.0, 1.0, rng)
    times, counts = g.loop_count_path()
    assert np.all(np.diff(times) > 0) if times.size > 1 else True
    assert counts.size == times.size == g.n_loops


def test_size_paths_track_branches():
    rng = spawn_rng(7)
    for _ in range(20):
        g = build_graph(3, 8, 1.5, 1.0, rng)
        paths = g.size_paths()
        assert np.array_equal(paths.final_sizes(), g.cluster_sizes())


def test_coupled_finite_tier_matches_build_graph():
    # the finite tier rides a dedicated child stream, so rebuilding it from
    # the same child seed reproduces it draw for draw
    q, n, lam, horizon = 2, 12, 1.0, 1.0
    for k in range(10):
        s_fin, _ = coupled_child_seeds(spawn_rng(8, "cpl", k))
        coupled = build_coupled(q, n, lam, horizon, spawn_rng(8, "cpl", k))
        direct = build_graph(q, n, lam, horizon, np.random.default_rng(s_fin))
        assert coupled.finite.export_records() == direct.export_records()
        assert np.array_equal(coupled.finite.member_ids, direct.member_ids)
        assert np.array_equal(coupled.finite.member_birth, direct.member_birth)


def test_coupled_structure():
    rng = spawn_rng(9, "coupled-structure")
    for _ in range(40):
        coupled = build_coupled(3, 9, 1.2, 1.0, rng)
        coupled.finite.validate()
        # merged events are strictly ordered and tagged by tier
        last = 0.0
        for e in coupled.events:
            assert e.s > last
            last = e.s
            assert e.tier in ("finite", "extension")
        fin = tuple(e for e in coupled.events if e.tier == "finite")
        assert fin == coupled.finite.events  # dropping the extension recovers it
        n_ext_members = coupled.n_members_total - coupled.finite.n_members
        assert np.all(
            coupled.member_ids[coupled.finite.n_members:] >= coupled.n_particles
        )
        assert n_ext_members == sum(
            1 for e in coupled.events if e.kind == "branch" and e.tier == "extension"
        )
        assert coupled.n_loops_total >= coupled.finite.n_loops


def test_coupled_total_size_follows_pure_birth_law():
    # with the extension tier glued on, each cluster grows like a pure birth
    # process: E[total members] = q * exp(lam * horizon)
    q, n, lam, horizon = 2, 15, 0.8, 1.0
    reps = 8000
    rng = spawn_rng(101, "coupled-law")
    totals = np.empty(reps)
    for r in range(reps):
        totals[r] = build_coupled(q, n, lam, horizon, rng).n_members_total
    mean = q * math.exp(lam * horizon)
    se = totals.std(ddof=1) / math.sqrt(reps)
    assert abs(totals.mean() - mean) < 3 * se


def brute_flags(coupled):
    """Independent recomputation of the per-cluster flags from the records."""
    q = coupled.q
    recs = coupled.export_records()

    def touches(rec, l):
        if rec["kind"] == "loop":
            return l in (rec["cluster_r"], rec["cluster_j"])
        return rec["cluster_r"] == l

    clean = []
    branch_only = []
    for l in range(q):
        touching = [r for r in recs if touches(r, l)]
        clean.append(all(r["kind"] == "branch" and r["tier"] == "finite" for r in touching))
        branch_only.append(all(r["kind"] == "branch" for r in touching))
    cross = {}
    for i in range(q):
        for j in range(i + 1, q):
            cross[(i, j)] = sum(
                1
                for r in recs
                if r["kind"] == "loop"
                and {r["cluster_r"], r["cluster_j"]} == {i, j}
            )
    return tuple(clean), tuple(branch_only), cross


def test_detect_events_matches_brute_force():
    rng = spawn_rng(11, "flags")
    seen_dirty = False
    for _ in range(100):
        coupled = build_coupled(3, 7, 1.5, 1.0, rng)
        flags = detect_events(coupled)
        clean, branch_only, cross = brute_flags(coupled)
        assert flags.clean_clusters == clean
        assert flags.branch_only_clusters == branch_only
        assert flags.cross_loops == cross
        assert flags.n_loops_total == coupled.n_loops_total
        assert flags.n_loops_finite == coupled.finite.n_loops
        seen_dirty = seen_dirty or not all(clean)
        # full-range block flags must agree with the global per-cluster ones
        assert flags.block_clean[(0, coupled.q - 1)] == clean
    assert seen_dirty  # the sample actually exercised loops


def test_detect_events_pair_block_flag():
    rng = spawn_rng(12, "pair-flag")
    found = {True: 0, False: 0}
    for _ in range(300):
        coupled = build_coupled(2, 6, 2.0, 1.0, rng)
        flags = detect_events(coupled)
        want = coupled.n_loops_total == 1 and flags.block_loops[(0, 1)] == 1
        assert flags.pair_blocks_single_loop == want
        found[want] += 1
    assert found[True] > 0 and found[False] > 0
