import math

import numpy as np
import pytest

from pochaos.battery import (
    pair_battery,
    standard_query_times,
    terminal_mean,
    unary_battery,
    zero_unary,
)
from pochaos.functionals import PathFunctional, tensor_product
from pochaos.models import kac_model, linear_toy_model
from pochaos.seeding import spawn_rng
from pochaos.stats import (
    clt_covariance,
    delta_sample,
    empirical_moment_sample,
    estimate_delta,
    estimate_wick_direct,
    estimate_wick_limit,
    forward_summary_sample,
    geometric_size_pmf,
    graph_count_summary,
    graph_loop_counts,
    hoeffding_decompose,
    marginal_second_moments,
    mean_se,
    normalized_mean_sample,
    pair_ustat_sample,
    slope_fit,
    wick_bound,
    wick_direct_values,
    wick_path_sample,
    yule_sizes,
    yule_total_sizes,
)

QT = standard_query_times(1.0)


def test_mean_se_exact():
    m, se = mean_se([1.0, 2.0, 3.0, 4.0])
    assert m == 2.5
    assert math.isclose(se, np.std([1, 2, 3, 4], ddof=1) / 2.0)
    m1, se1 = mean_se([5.0])
    assert m1 == 5.0 and math.isnan(se1)


def test_slope_fit_exact_line():
    x = np.array([0.0, 1.0, 2.0, 3.0])
    slope, se = slope_fit(x, 2.0 * x + 1.0)
    assert math.isclose(slope, 2.0)
    assert math.isnan(se)


def test_slope_fit_error_propagation():
    x = np.array([0.0, 1.0, 2.0])
    y = np.array([0.0, 1.0, 2.0])
    y_se = np.array([0.1, 0.2, 0.3])
    slope, se = slope_fit(x, (y, y_se))
    xc = x - x.mean()
    denom = (xc**2).sum()
    expect = math.sqrt(((xc / denom) ** 2 * y_se**2).sum())
    assert math.isclose(slope, 1.0)
    assert math.isclose(se, expect)


def test_delta_sample_chunk_invariance():
    model = kac_model()
    F = pair_battery(1.0)[2]
    full = delta_sample(model, 2, 10, 1.0, F, 10, master_seed=1)
    lo = delta_sample(model, 2, 10, 1.0, F, 5, master_seed=1)
    hi = delta_sample(model, 2, 10, 1.0, F, 5, master_seed=1, replica_start=5)
    assert np.array_equal(full[0], np.concatenate([lo[0], hi[0]]))
    assert np.array_equal(full[1], np.concatenate([lo[1], hi[1]]))


def test_wick_path_sample_chunk_invariance():
    model = kac_model()
    wf, pf = wick_path_sample(model, 1.0, QT, 8, master_seed=2)
    w1, p1 = wick_path_sample(model, 1.0, QT, 3, master_seed=2)
    w2, p2 = wick_path_sample(model, 1.0, QT, 5, master_seed=2, replica_start=3)
    assert np.array_equal(wf, np.concatenate([w1, w2]))
    assert np.array_equal(pf, np.concatenate([p1, p2]))


def test_forward_sampler_chunk_invariance():
    model = kac_model()
    f = unary_battery(1.0)[0]
    full = normalized_mean_sample(model, f, 10, 1.0, 9, master_seed=3)
    parts = [
        normalized_mean_sample(model, f, 10, 1.0, 4, master_seed=3),
        normalized_mean_sample(model, f, 10, 1.0, 5, master_seed=3, replica_start=4),
    ]
    assert np.array_equal(full, np.concatenate(parts))

    fs = unary_battery(1.0)
    full_m = empirical_moment_sample(model, fs, 10, 1.0, 7, master_seed=4)
    parts_m = [
        empirical_moment_sample(model, fs, 10, 1.0, 2, master_seed=4),
        empirical_moment_sample(model, fs, 10, 1.0, 5, master_seed=4, replica_start=2),
    ]
    assert np.array_equal(full_m, np.concatenate(parts_m))

    parts2 = [terminal_mean(1.0), terminal_mean(1.0)]
    full_u = pair_ustat_sample(model, parts2, 10, 1.0, 7, master_seed=5)
    parts_u = [
        pair_ustat_sample(model, parts2, 10, 1.0, 3, master_seed=5),
        pair_ustat_sample(model, parts2, 10, 1.0, 4, master_seed=5, replica_start=3),
    ]
    assert np.array_equal(full_u, np.concatenate(parts_u))


def test_forward_summary_matches_moment_sample():
    model = kac_model()
    fs = unary_battery(1.0)
    vals, energy = forward_summary_sample(
        model, fs, 12, 1.0, 6, master_seed=6, experiment_id="shared"
    )
    direct = empirical_moment_sample(
        model, fs, 12, 1.0, 6, master_seed=6, experiment_id="shared"
    )
    assert np.array_equal(vals, direct)
    # the kac dynamics conserve kinetic energy pathwise
    assert np.abs(energy - energy[:, :1]).max() < 1e-10


def test_graph_count_summary_matches_loop_counts():
    loops, members = graph_count_summary(2, 10, 1.0, 1.0, 500, master_seed=7)
    only_loops = graph_loop_counts(2, 10, 1.0, 1.0, 500, master_seed=7)
    assert np.array_equal(loops, only_loops)
    assert loops.shape == members.shape == (500,)
    assert np.all(members >= 2) and np.all(members <= 10)
    assert np.all(loops >= 0)
    empty = graph_count_summary(2, 10, 1.0, 1.0, 0, master_seed=7)
    assert empty[0].size == 0 and empty[1].size == 0


def test_graph_count_summary_map_fn_order():
    eager = graph_count_summary(2, 10, 1.0, 1.0, 300, master_seed=8)
    lazy = graph_count_summary(
        2, 10, 1.0, 1.0, 300, master_seed=8, map_fn=lambda fn, tasks: list(map(fn, tasks))
    )
    assert np.array_equal(eager[0], lazy[0])
    assert np.array_equal(eager[1], lazy[1])


def test_estimate_delta_structure():
    model = kac_model()
    F = pair_battery(1.0)[2]
    report = estimate_delta(
        model, 2, 10, 1.0, F, l_max=1, replicas=400, master_seed=9,
        moment_replicas=2000,
    )
    assert report.reconstruction_gap == 0.0
    assert sum(report.bin_counts) == 400
    assert len(report.delta) == 2
    assert len(report.bin_means) == 3  # l = 0, 1, tail
    # delta[0] is the mean of the values in the zero-loop bin, others zeroed
    sample = delta_sample(model, 2, 10, 1.0, F, 400, master_seed=9)
    vals, loops = sample
    manual = np.where(loops == 0, vals, 0.0).mean()
    assert math.isclose(report.delta[0].value, manual, rel_tol=1e-12)
    manual1 = (np.where(loops == 1, vals, 0.0) * 9.0).mean()
    assert math.isclose(report.delta[1].value, manual1, rel_tol=1e-12)
    assert all(b > 0 for b in report.loop_moment_bounds)
    # reusing the same sample must reproduce the report
    again = estimate_delta(
        model, 2, 10, 1.0, F, l_max=1, replicas=400, master_seed=9,
        moment_replicas=2000, sample=sample,
    )
    assert again.delta[0].value == report.delta[0].value
    assert again.bin_counts == report.bin_counts


def test_estimate_delta_validation():
    model = kac_model()
    F = pair_battery(1.0)[2]
    with pytest.raises(ValueError):
        estimate_delta(model, 3, 10, 1.0, F, l_max=1, replicas=10, master_seed=0)
    with pytest.raises(ValueError):
        estimate_delta(
            model, 2, 10, 1.0, F, l_max=1, replicas=10, master_seed=0,
            sample=(np.zeros(5), np.zeros(5, dtype=np.int64)),
        )


def test_wick_direct_zero_functional_is_exactly_zero():
    model = kac_model()
    f = unary_battery(1.0)[0]
    z = zero_unary(1.0)
    report = estimate_wick_direct(model, f, z, 1.0, 200, master_seed=10)
    assert report.value == 0.0
    assert report.se == 0.0


def test_wick_direct_validation():
    model = kac_model()
    f = unary_battery(1.0)[0]
    F2 = pair_battery(1.0)[0]
    with pytest.raises(ValueError):
        estimate_wick_direct(model, F2, f, 1.0, 10, master_seed=0)
    g = PathFunctional(
        arity=1, query_times=(0.0, 2.0), fn=lambda x: x[..., 0, 0], bound=1.0, name="g"
    )
    with pytest.raises(ValueError):
        estimate_wick_direct(model, f, g, 1.0, 10, master_seed=0)
    with pytest.raises(ValueError):
        estimate_wick_direct(model, f, f, 1.0, 10, master_seed=0, lam=2.0)


def test_wick_direct_symmetric_in_law():
    model = kac_model()
    fs = unary_battery(1.0)
    f, g = fs[0], fs[1]
    reps = 20000
    a = estimate_wick_direct(model, f, g, 1.0, reps, master_seed=11, experiment_id="sym-a")
    b = estimate_wick_direct(model, g, f, 1.0, reps, master_seed=12, experiment_id="sym-b")
    assert abs(a.value - b.value) < 3 * math.hypot(a.se, b.se)


def test_wick_direct_values_formula():
    weights = np.array([2.0, 3.0])
    paths = spawn_rng(13).normal(size=(2, 4, 3, 1))
    f, g = unary_battery(1.0)[:2]
    vals = wick_direct_values(weights, paths, f, g)
    expect = weights * (
        f.fn(paths[:, 0]) * g.fn(paths[:, 1]) - f.fn(paths[:, 2]) * g.fn(paths[:, 3])
    )
    assert np.allclose(vals, expect, atol=1e-14)


def test_estimate_wick_limit_scales_pair_ustat():
    model = kac_model()
    f = unary_battery(1.0)[0]
    n, reps = 8, 50
    report = estimate_wick_limit(model, f, f, n, 1.0, reps, master_seed=14)
    vals = np.empty(reps)
    for r in range(reps):
        from pochaos.seeding import replica_rng
        from pochaos.forward import forward_paths

        rng = replica_rng(14, "wick-limit", r)
        paths = forward_paths(model, n, 1.0, f.query_times, rng)
        a = np.asarray(f.fn(paths))
        vals[r] = (a.sum() ** 2 - (a * a).sum()) / (n * (n - 1))
    assert math.isclose(report.value, n * vals.mean(), rel_tol=1e-12)
    assert report.details["n_particles"] == n


def test_wick_bound_formula():
    f = unary_battery(1.0)[0]
    g = unary_battery(1.0)[1]
    expect = 2.0 * f.bound * g.bound * 1.0 * 1.0 * math.exp(2.0)
    assert math.isclose(wick_bound(f, g, 1.0, 1.0), expect)


def test_clt_covariance_assembly():
    fs = unary_battery(1.0)[:2]
    s = np.array([[1.0, 0.2], [0.2, 0.8]])
    v = np.array([[0.1, -0.05], [-0.05, 0.3]])
    cov = clt_covariance(fs, v, s)
    assert np.allclose(cov.matrix, s + v)
    assert cov.names == (fs[0].name, fs[1].name)
    with pytest.raises(ValueError):
        clt_covariance(fs, np.array([[0.1, 0.5], [-0.5, 0.3]]), s)
    with pytest.raises(ValueError):
        clt_covariance(fs, np.zeros((3, 3)), s)


def test_marginal_second_moments_manual():
    fs = unary_battery(1.0)[:2]
    sample = spawn_rng(15).normal(size=(100, 3, 1))
    out = marginal_second_moments(fs, sample)
    v0 = fs[0].fn(sample)
    v1 = fs[1].fn(sample)
    assert math.isclose(out[0, 1], (v0 * v1).mean())
    assert math.isclose(out[0, 0], (v0 * v0).mean())
    assert np.array_equal(out, out.T)


def test_hoeffding_reconstruction_exact():
    F = tensor_product([terminal_mean(1.0), terminal_mean(1.0)])

    def sampler(n, rng):
        return rng.normal(size=(n, 3, 1))

    dec = hoeffding_decompose(F, sampler, 400, seed=16)
    pts = spawn_rng(17).normal(size=(10, 2, 3, 1))
    recon = (
        dec.theta
        + dec.component(1, pts[:, :1])
        + dec.component(1, pts[:, 1:])
        + dec.component(2, pts)
    )
    direct = F.fn(pts[:, 0], pts[:, 1])
    assert np.allclose(recon, direct, atol=1e-10)
    # iid standard normal slots make the grand mean vanish
    assert abs(dec.theta) < 4 * dec.theta_se + 1e-12
    # conditioning on every slot returns the raw functional
    full = dec.conditional_mean(2, pts)
    assert np.allclose(full, direct, atol=1e-12)


def test_hoeffding_validation():
    F = tensor_product([terminal_mean(1.0), terminal_mean(1.0)])

    def sampler(n, rng):
        return rng.normal(size=(n, 3, 1))

    dec = hoeffding_decompose(F, sampler, 50, seed=18)
    with pytest.raises(ValueError):
        dec.component(0, np.zeros((1, 0, 3, 1)))
    with pytest.raises(ValueError):
        dec.conditional_mean(3, np.zeros((1, 3, 3, 1)))
    asym = PathFunctional(
        arity=2, query_times=(0.0, 0.5, 1.0),
        fn=lambda x, y: x[..., 0, 0], bound=1.0, name="a",
    )
    with pytest.raises(ValueError):
        hoeffding_decompose(asym, sampler, 50, seed=18)


def test_geometric_size_pmf():
    lam, horizon = 1.0, 1.0
    pmf = geometric_size_pmf(lam, horizon, k_max=200)
    p = math.exp(-lam * horizon)
    assert math.isclose(pmf[0], p)
    assert math.isclose(pmf[1], p * (1 - p))
    assert math.isclose(pmf.sum(), 1.0, abs_tol=1e-8)


def test_yule_sizes_agree_with_pmf():
    sizes = yule_sizes(1.0, 1.0, 20000, seed=19)
    assert np.array_equal(sizes, yule_sizes(1.0, 1.0, 20000, seed=19))
    pmf = geometric_size_pmf(1.0, 1.0, k_max=sizes.max())
    mean = (np.arange(1, pmf.size + 1) * pmf).sum() / pmf.sum()
    se = sizes.std(ddof=1) / math.sqrt(sizes.size)
    assert abs(sizes.mean() - mean) < 3 * se


def test_yule_total_sizes_sum_of_trees():
    totals = yule_total_sizes(3, 1.0, 1.0, 5000, seed=20)
    assert np.all(totals >= 3)
    se = totals.std(ddof=1) / math.sqrt(totals.size)
    assert abs(totals.mean() - 3 * math.e) < 3 * se


def test_toy_sampler_runs_through_stats_layer():
    model = linear_toy_model()
    f = terminal_mean(1.0)
    vals = normalized_mean_sample(model, f, 50, 1.0, 200, master_seed=21)
    mean = vals.mean() / math.sqrt(50)
    se = vals.std(ddof=1) / math.sqrt(vals.size) / math.sqrt(50)
    from pochaos.models import toy_mean_at

    assert abs(mean - toy_mean_at(model, 1.0)) < 3 * se
