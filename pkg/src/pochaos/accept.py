"""Acceptance checks: the 11 package-level validation criteria.

Each check returns (passed, detail) and is deterministic for a given seed.
`quick=True` shrinks replica counts for smoke runs and widens the
noise-limited thresholds accordingly; exact checks stay exact. The pytest
acceptance module and the CLI selftest both run these.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import battery, combinatorics, stats
from .forward import forward_paths, u_statistic_pair_batch
from .functionals import center_functional
from .graphs import build_coupled, build_graph
from .models import kac_model, linear_toy_model, maxwell_collision, toy_mean_at
from .realize import marginal_paths, realize_branch_only, realize_system
from .seeding import derive_seed, replica_rng, replica_seed, spawn_rng

DEFAULT_SEED = 20260814
KS_1PCT = 1.6276  # critical constant: statistic * sqrt(replicas)


@dataclass(frozen=True)
class CheckResult:
    criterion: int
    name: str
    passed: bool
    detail: str


def _reps(n, quick):
    return max(200, n // 50) if quick else n


def _fmt(x):
    return f"{x:.4g}"


# -- 1 ---------------------------------------------------------------------


def _c1_combinatorics(seed, quick):
    lines = []
    ok = True
    expected_i = {2: 1, 4: 3, 6: 15}
    for k, v in expected_i.items():
        if combinatorics.pair_count(k) != v:
            ok = False
            lines.append(f"I_{k}={combinatorics.pair_count(k)}!={v}")
    for q in range(2, 13, 2):
        got = combinatorics.alternating_sum(q)
        want = (-1) ** (q // 2 + 1) * combinatorics.pair_count(q)
        if got != want:
            ok = False
            lines.append(f"q={q}: {got}!={want}")
    for m in range(2, 11, 2):
        got = combinatorics.pair_refinement_sum(m)
        want = (-1) ** (m // 2) * combinatorics.pair_count(m)
        if got != want:
            ok = False
            lines.append(f"refinement m={m}: {got}!={want}")
    detail = "; ".join(lines) if lines else "q=2..12 alternating sums match closed form exactly"
    return ok, detail


# -- 2 ---------------------------------------------------------------------


def _random_instance(rng, n, q, d):
    pts = rng.normal(size=(n, d))
    w = rng.normal(size=(q, d))
    b = float(rng.normal())

    def F(x):
        return np.cos((np.asarray(x) * w).sum(axis=(-1, -2)) + b)

    return pts, F


def _tensor_mean(pts, F, q):
    n = pts.shape[0]
    idx = np.array(list(itertools.product(range(n), repeat=q)), dtype=np.int64)
    return float(np.asarray(F(pts[idx])).mean())


def _c2_stirling(seed, quick):
    rng = spawn_rng(seed, "c2")
    d = 2
    worst = 0.0
    count = 0
    per_combo = 2 if quick else 6
    for n in range(2, 7):
        for q in range(1, min(4, n) + 1):
            for _ in range(per_combo):
                pts, F = _random_instance(rng, n, q, d)
                lhs = _tensor_mean(pts, F, q)
                rhs = combinatorics.stirling_expand(pts, F, q)
                worst = max(worst, abs(lhs - rhs))
                count += 1
    ok = worst <= 1e-10
    return ok, f"{count} instances, max |tensor - expansion| = {worst:.2e} (tol 1e-10)"


# -- 3 ---------------------------------------------------------------------


def _c3_collision(seed, quick):
    from .models import maxwell_model

    rng = spawn_rng(seed, "c3")
    n = _reps(1_000_000, quick)
    v = rng.normal(size=(n, 3))
    w = rng.normal(size=(n, 3))
    nu = rng.normal(size=(n, 3))
    nu /= np.linalg.norm(nu, axis=1, keepdims=True)
    vs, ws = maxwell_collision(v, w, nu)
    mom = np.abs((vs + ws) - (v + w)).max()
    e0 = (v**2).sum(axis=1) + (w**2).sum(axis=1)
    e1 = (vs**2).sum(axis=1) + (ws**2).sum(axis=1)
    energy = np.abs(e1 - e0).max()

    # the jump kernel hands out the two increments as exact negations, so
    # the momentum increment of an applied collision cancels bitwise
    kernel = maxwell_model().kernel
    increment_exact = True
    for _ in range(_reps(10_000, quick)):
        z = np.concatenate([rng.random(3), rng.normal(size=3)])
        a = np.concatenate([rng.random(3), rng.normal(size=3)])
        h, k = kernel.sample_joint(z, a, rng)
        if not np.array_equal(h, -k):
            increment_exact = False
            break
    ok = increment_exact and energy <= 1e-12 and mom <= 1e-12
    return ok, (
        f"{n} collisions: kernel increments cancel exactly={increment_exact}, "
        f"max momentum defect {mom:.2e}, max energy defect {energy:.2e} (tol 1e-12)"
    )


# -- 4 ---------------------------------------------------------------------


def _c4_yule_law(seed, quick):
    reps = _reps(100_000, quick)
    sizes = stats.yule_sizes(1.0, 1.0, reps, derive_seed(seed, "c4"))
    kmax = int(sizes.max())
    emp = np.bincount(sizes, minlength=kmax + 1)[1:] / reps
    pmf = stats.geometric_size_pmf(1.0, 1.0, kmax)
    tail = 1.0 - pmf.sum()
    tv = 0.5 * (np.abs(emp - pmf).sum() + tail)
    threshold = 0.01 if not quick else 0.01 * math.sqrt(100_000 / reps)
    ok = tv < threshold
    return ok, f"TV(empirical size law, geometric) = {tv:.4f} over {reps} replicas (tol {threshold:.3g})"


# -- 5 ---------------------------------------------------------------------


def _c5_forward_backward(seed, quick):
    model = kac_model(1.0)
    horizon = 1.0
    fs = battery.pair_battery(horizon)
    qt = fs[0].query_times
    reps = _reps(100_000, quick)

    paths = np.empty((reps, 5, len(qt), 1))
    for r in range(reps):
        rng = replica_rng(seed, "c5-forward", r)
        paths[r] = forward_paths(model, 5, horizon, qt, rng)
    fwd = {F.name: u_statistic_pair_batch(paths, F) for F in fs}

    back = {F.name: np.empty(reps) for F in fs}
    for r in range(reps):
        rng = replica_rng(seed, "c5-backward", r)
        graph = build_graph(2, 5, 1.0, horizon, rng)
        s = derive_seed(replica_seed(seed, "c5-backward", r), "realize")
        real = realize_system(graph, model, qt, s)
        for F in fs:
            back[F.name][r] = F.fn(real.root_paths[0], real.root_paths[1])

    lines = []
    ok = True
    for F in fs:
        mf, sf = stats.mean_se(fwd[F.name])
        mb, sb = stats.mean_se(back[F.name])
        gap = abs(mf - mb)
        lim = 3.0 * math.hypot(sf, sb)
        if gap > lim:
            ok = False
            lines.append(f"{F.name}: |{_fmt(mf)}-{_fmt(mb)}|={gap:.2e}>{lim:.2e}")
    detail = (
        "; ".join(lines)
        if lines
        else f"8 functionals agree within 3 combined SE at {reps} replicas per route"
    )
    return ok, detail


# -- 6 ---------------------------------------------------------------------


def _c6_product_law(seed, quick):
    horizon = 1.0
    reps = _reps(100_000, quick)
    lines = []
    ok = True

    model = kac_model(1.0)
    us = battery.unary_battery(horizon)
    qt = us[0].query_times
    vals = np.empty((reps, 2, len(us)))
    for r in range(reps):
        rng = replica_rng(seed, "c6-kac", r)
        coupled = build_coupled(2, 10, 1.0, horizon, rng)
        s = derive_seed(replica_seed(seed, "c6-kac", r), "realize")
        real = realize_branch_only(coupled, model, qt, s)
        for root in (0, 1):
            for i, f in enumerate(us):
                vals[r, root, i] = f.fn(real.root_paths[root])
    for i, j in [(0, 0), (1, 1), (0, 1)]:
        a = vals[:, 0, i]
        b = vals[:, 1, j]
        w = (a - a.mean()) * (b - b.mean())
        cov, se = stats.mean_se(w)
        if abs(cov) > 3.0 * se:
            ok = False
            lines.append(f"cov({us[i].name},{us[j].name})={cov:.2e} > 3se={3*se:.2e}")

    toy = linear_toy_model(jump_rate=1.0, mean_jump=0.5, sd_jump=1.0)
    fmean = battery.terminal_mean(horizon)
    tvals = np.empty(reps)
    for r in range(reps):
        rng = replica_rng(seed, "c6-toy", r)
        coupled = build_coupled(2, 10, toy.kernel.mass_bound, horizon, rng)
        s = derive_seed(replica_seed(seed, "c6-toy", r), "realize")
        real = realize_branch_only(coupled, toy, fmean.query_times, s)
        tvals[r] = fmean.fn(real.root_paths[0])
    m, se = stats.mean_se(tvals)
    target = toy_mean_at(toy, horizon)
    if abs(m - target) > 3.0 * se:
        ok = False
        lines.append(f"toy mean {m:.4f} vs closed form {target:.4f} > 3se={3*se:.2e}")

    detail = (
        "; ".join(lines)
        if lines
        else (
            f"cross-covariances within 3se and toy mean matches closed form "
            f"({m:.4f} vs {target:.4f}) at {reps} replicas"
        )
    )
    return ok, detail


# -- 7 ---------------------------------------------------------------------


def _c7_chaos_bound(seed, quick):
    model = kac_model(1.0)
    horizon = 1.0
    fs = battery.pair_battery(horizon)
    qt = fs[0].query_times
    reps = _reps(100_000, quick)
    lines = []
    ok = True
    for n in (100, 1000):
        diffs = {F.name: np.empty(reps) for F in fs}
        for r in range(reps):
            rng = replica_rng(seed, f"c7-{n}", r)
            coupled = build_coupled(2, n, 1.0, horizon, rng)
            s = derive_seed(replica_seed(seed, f"c7-{n}", r), "realize")
            zr = realize_system(coupled.finite, model, qt, s)
            zt = realize_branch_only(coupled, model, qt, s)
            for F in fs:
                diffs[F.name][r] = F.fn(zr.root_paths[0], zr.root_paths[1]) - F.fn(
                    zt.root_paths[0], zt.root_paths[1]
                )
        bound = 2.0 * 2 * 1 * (1.0 + 1.0) / (n - 1)  # 2q(q-1)(Lt + L^2 t^2)/(N-1), ||F||=1
        for F in fs:
            m, se = stats.mean_se(diffs[F.name])
            if abs(m) > bound + 3.0 * se:
                ok = False
                lines.append(f"N={n} {F.name}: |{m:.4f}| > {bound:.4f}+3se")
    detail = (
        "; ".join(lines)
        if lines
        else f"couplings within 2q(q-1)(Lt+L^2t^2)/(N-1) bound at N=100,1000 ({reps} replicas)"
    )
    return ok, detail


# -- 8 ---------------------------------------------------------------------


def _c8_expansion(seed, quick):
    model = kac_model(1.0)
    horizon = 1.0
    F = battery.pair_battery(horizon)[2]  # nonnegative gaussian pair functional
    reps = _reps(200_000, quick)
    rep = stats.estimate_delta(
        model, 2, 100, horizon, F, l_max=2, replicas=reps,
        master_seed=derive_seed(seed, "c8-delta"),
        moment_replicas=_reps(100_000, quick),
    )
    lines = []
    ok = True
    for l, d in enumerate(rep.delta):
        if d.value < 0:
            ok = False
            lines.append(f"delta[{l}]={d.value:.3e}<0")
    if rep.reconstruction_gap != 0.0:
        ok = False
        lines.append(f"reconstruction gap {rep.reconstruction_gap!r} != 0")
    for l, d in enumerate(rep.delta):
        cap = rep.loop_moment_bounds[l]
        slack = 3.0 * math.hypot(d.se, rep.loop_moment_bound_ses[l])
        if d.value > cap + slack:
            ok = False
            lines.append(f"delta[{l}]={d.value:.3f} exceeds bound {cap:.3f}+{slack:.3f}")

    ladder = [(100, _reps(100_000, quick)), (1000, _reps(400_000, quick)), (10_000, _reps(1_600_000, quick))]
    ys = []
    ses = []
    for n, r in ladder:
        counts = stats.graph_loop_counts(2, n, 1.0, horizon, r, derive_seed(seed, "c8-slope"))
        p = float((counts >= 1).mean())
        ys.append(math.log(n * p))
        ses.append(math.sqrt((1.0 - p) / (p * r)))
    slope, slope_se = stats.slope_fit(np.log([n for n, _ in ladder]), (np.array(ys), np.array(ses)))
    tol = 0.1 if not quick else 0.3
    if abs(slope) > tol:
        ok = False
        lines.append(f"N*P(L>=1) log-log slope {slope:.3f} outside 0 +/- {tol}")
    detail = (
        "; ".join(lines)
        if lines
        else (
            f"delta>=0, gap=0, bounds hold (l<=2, {reps} replicas); "
            f"N*P(L>=1) slope {slope:.3f}+/-{slope_se:.3f} in 0+/-{tol}"
        )
    )
    return ok, detail


# -- 9 ---------------------------------------------------------------------


def _centered_unary(model, horizon, seed, quick):
    # the sqrt(N) normalization in the downstream checks amplifies the
    # centering residual by sqrt(N / sample size), so the offset sample is
    # kept much larger than the noise floor of those checks needs
    us = battery.unary_battery(horizon)
    qt = us[0].query_times
    sample = marginal_paths(model, _reps(16_000_000, quick), horizon, qt, derive_seed(seed, "centering"))
    out = []
    for f in us:
        fc, record = center_functional(f, sample)
        out.append((fc, record))
    return out, sample


def _c9_wick(seed, quick):
    model = kac_model(1.0)
    horizon = 1.0
    centered, _ = _centered_unary(model, horizon, seed, quick)
    (f1, _), (f2, _), (f3, _) = centered
    pairs = [(f1, f1), (f1, f2), (f2, f3)]
    direct = stats.wick_direct_battery(
        model, pairs, horizon, _reps(300_000, quick), derive_seed(seed, "c9-direct")
    )
    lines = []
    ok = True
    for i, ((f, g), d) in enumerate(zip(pairs, direct)):
        lim = stats.estimate_wick_limit(
            model, f, g, 10_000, horizon, _reps(10_000, quick),
            derive_seed(seed, f"c9-limit-{i}"),
        )
        gap = abs(d.value - lim.value)
        tol = 3.0 * math.hypot(d.se, lim.se)
        if gap > tol:
            ok = False
            lines.append(
                f"({f.name},{g.name}): direct {d.value:.4f} vs limit {lim.value:.4f}, gap {gap:.4f} > {tol:.4f}"
            )
        cap = stats.wick_bound(f, g, 1.0, horizon)
        if abs(d.value) > cap + 3.0 * d.se:
            ok = False
            lines.append(f"({f.name},{g.name}): |V|={abs(d.value):.3f} breaks bound {cap:.3f}")
    detail = (
        "; ".join(lines)
        if lines
        else "3 pairs: direct and limit estimates agree within 3 combined SE; bound respected"
    )
    return ok, detail


# -- 10 --------------------------------------------------------------------


def _c10_clt(seed, quick):
    from scipy import stats as sps

    model = kac_model(1.0)
    horizon = 1.0
    centered, sample = _centered_unary(model, horizon, seed, quick)
    fs = [fc for fc, _ in centered]
    second = stats.marginal_second_moments(fs, sample)
    diag_pairs = [(f, f) for f in fs]
    direct = stats.wick_direct_battery(
        model, diag_pairs, horizon, _reps(200_000, quick), derive_seed(seed, "c10-v")
    )
    reps = _reps(10_000, quick)
    lines = []
    ok = True
    for i, f in enumerate(fs):
        k_hat = second[i, i] + direct[i].value
        if k_hat <= 0:
            ok = False
            lines.append(f"{f.name}: estimated limit variance {k_hat:.4f} <= 0")
            continue
        vals = stats.normalized_mean_sample(
            model, f, 1000, horizon, reps, derive_seed(seed, f"c10-ks-{i}")
        )
        ks = sps.kstest(vals, sps.norm(loc=0.0, scale=math.sqrt(k_hat)).cdf).statistic
        crit = KS_1PCT / math.sqrt(reps)
        if ks >= crit:
            ok = False
            lines.append(f"{f.name}: KS {ks:.4f} >= {crit:.4f} (K={k_hat:.4f})")

    m4 = []
    m4_se = []
    ladder = (100, 1000, 10_000)
    for n in ladder:
        evals = stats.empirical_moment_sample(
            model, [fs[0]], n, horizon, reps, derive_seed(seed, f"c10-m4-{n}")
        )[:, 0]
        v4 = evals**4
        m, se = stats.mean_se(v4)
        m4.append(m)
        m4_se.append(se / m)
    slope, slope_se = stats.slope_fit(np.log(ladder), (np.log(m4), np.array(m4_se)))
    tol = 0.3 if not quick else 0.6
    if abs(slope + 2.0) > tol:
        ok = False
        lines.append(f"4th-moment slope {slope:.3f} outside -2 +/- {tol}")
    detail = (
        "; ".join(lines)
        if lines
        else (
            f"KS below 1% critical for 3 functionals at N=1000 ({reps} replicas); "
            f"4th-moment slope {slope:.3f}+/-{slope_se:.3f}"
        )
    )
    return ok, detail


# -- 11 --------------------------------------------------------------------


def _c11_odd_degeneracy(seed, quick):
    model = kac_model(1.0)
    horizon = 1.0
    f = battery.skewed_unary(horizon)
    sample = marginal_paths(
        model, _reps(1_000_000, quick), horizon, f.query_times, derive_seed(seed, "c11-marg")
    )
    fc, _ = center_functional(f, sample)
    reps = _reps(20_000, quick)
    ladder = (100, 1000, 10_000)
    st = []
    st_se = []
    for n in ladder:
        vals = stats.pair_ustat_sample(
            model, [fc, fc, fc], n, horizon, reps, derive_seed(seed, f"c11-{n}")
        )
        m, se = stats.mean_se(vals)
        st.append(n**1.5 * m)
        st_se.append(n**1.5 * se)
    ok = True
    lines = []
    for i in range(len(ladder) - 1):
        slack = 3.0 * math.hypot(st_se[i], st_se[i + 1])
        if abs(st[i + 1]) > abs(st[i]) + slack:
            ok = False
            lines.append(
                f"|stat| rose {abs(st[i]):.4f}->{abs(st[i+1]):.4f} beyond slack {slack:.4f}"
            )
    if abs(st[-1]) > abs(st[0]) + 3.0 * math.hypot(st_se[0], st_se[-1]):
        ok = False
        lines.append("no overall decrease")
    vals_str = ", ".join(f"{v:.4f}+/-{s:.4f}" for v, s in zip(st, st_se))
    detail = "; ".join(lines) if lines else f"N^(3/2) U3 stats over ladder: {vals_str}"
    return ok, detail


# ---------------------------------------------------------------------------

CRITERIA = {
    1: ("exact pair combinatorics", _c1_combinatorics),
    2: ("tensor moment expansion identity", _c2_stirling),
    3: ("collision conservation", _c3_collision),
    4: ("pure-birth size law", _c4_yule_law),
    5: ("forward/backward equality", _c5_forward_backward),
    6: ("branch-only product law", _c6_product_law),
    7: ("chaos propagation bound", _c7_chaos_bound),
    8: ("loop expansion structure", _c8_expansion),
    9: ("covariance cross-validation", _c9_wick),
    10: ("central limit pipeline", _c10_clt),
    11: ("odd-order degeneracy decay", _c11_odd_degeneracy),
}


def run_criterion(num, seed=DEFAULT_SEED, quick=False):
    name, fn = CRITERIA[num]
    passed, detail = fn(seed, quick)
    return CheckResult(criterion=num, name=name, passed=passed, detail=detail)


def format_result(res):
    status = "PASS" if res.passed else "FAIL"
    return f"criterion {res.criterion:2d} [{status}] {res.name}: {res.detail}"


def run_all(seed=DEFAULT_SEED, quick=False, echo=None):
    results = []
    for num in sorted(CRITERIA):
        res = run_criterion(num, seed=seed, quick=quick)
        results.append(res)
        if echo is not None:
            echo(format_result(res))
    return results
