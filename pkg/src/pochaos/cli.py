"""Command line interface: batch experiment runner.

Every command resolves an ExperimentConfig (TOML file plus flag overrides),
fans replicas out over a worker pool in fixed-size chunks keyed by global
replica index, reduces in chunk order, and writes one CSV per table plus a
JSON bundle and a run manifest under the output directory. The emitted
numbers depend only on (config, seed), never on the worker count.

Exit codes: 0 success, 1 config error, 2 selftest failure.
"""

import csv
import json
import math
import pathlib
import sys
from concurrent.futures import ProcessPoolExecutor

import click
import numpy as np

from . import accept, stats
from .battery import named_battery, unary_battery, zero_unary
from .config import ConfigError, config_hash, default_config, load_config, make_manifest, repro_config
from .functionals import center_functional, shift_functional
from .models import make_model
from .realize import marginal_paths
from .seeding import derive_seed

REPLICA_CHUNK = 8192


def _chunks(total, chunk=REPLICA_CHUNK):
    return [(s, min(chunk, total - s)) for s in range(0, total, chunk)]


def _map_tasks(fn, tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks))


def _battery_pick(battery_name, functional_name, horizon):
    fs = named_battery(battery_name, horizon)
    if not functional_name:
        return fs[0]
    for f in fs:
        if f.name == functional_name:
            return f
    names = ", ".join(f.name for f in fs)
    raise ConfigError(f"experiment.functional: '{functional_name}' not in battery ({names})")


# Worker task bodies rebuild models and functionals from primitives so the
# task tuples stay picklable.


def _w_forward(task):
    name, params, n, horizon, seed, exp_id, start, size = task
    model = make_model(name, **params)
    fs = unary_battery(horizon)
    return stats.forward_summary_sample(
        model, fs, n, horizon, size, seed, exp_id, replica_start=start
    )


def _w_delta(task):
    name, params, battery_name, f_name, q, n, horizon, seed, exp_id, start, size = task
    model = make_model(name, **params)
    F = _battery_pick(battery_name, f_name, horizon)
    return stats.delta_sample(model, q, n, horizon, F, size, seed, exp_id, replica_start=start)


def _w_wick(task):
    name, params, horizon, qt, seed, exp_id, start, size = task
    model = make_model(name, **params)
    return stats.wick_path_sample(model, horizon, qt, size, seed, exp_id, replica_start=start)


def _w_clt(task):
    name, params, f_index, offset, n, horizon, seed, exp_id, start, size = task
    model = make_model(name, **params)
    f = shift_functional(unary_battery(horizon)[f_index], offset)
    return stats.normalized_mean_sample(
        model, f, n, horizon, size, seed, exp_id, replica_start=start
    )


# ---------------------------------------------------------------------------
# Emission.


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)!r}")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _emit(command, cfg, tables, extra=None):
    outdir = pathlib.Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    bundle_tables = {}
    for name, header, rows in tables:
        path = outdir / f"{name}.csv"
        _write_csv(path, header, rows)
        written.append(path.name)
        bundle_tables[name] = {"header": list(header), "rows": [list(r) for r in rows]}
    bundle = {
        "command": command,
        "config": repro_config(cfg),
        "config_hash": config_hash(cfg),
        "tables": bundle_tables,
        "extra": extra or {},
    }
    bundle_path = outdir / f"{command.replace('-', '_')}.json"
    bundle_path.write_text(json.dumps(bundle, indent=2, sort_keys=True, default=_json_default))
    written.append(bundle_path.name)
    manifest = make_manifest(command, cfg, outputs=tuple(written))
    (outdir / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2))
    click.echo(f"{command}: wrote {', '.join(written)} and manifest.json to {outdir}")


# ---------------------------------------------------------------------------
# Option plumbing.


def _common_options(fn):
    for opt in reversed(
        [
            click.option("--config", "config_path", type=click.Path(), default=None, help="TOML config file."),
            click.option("--seed", type=int, default=None, help="Master seed override."),
            click.option("--workers", type=int, default=None, help="Worker process count."),
            click.option("--out", type=click.Path(), default=None, help="Output directory."),
            click.option("--n-ladder", default=None, help="Comma-separated particle counts."),
            click.option("--replicas", type=int, default=None, help="Replica count override."),
        ]
    ):
        fn = opt(fn)
    return fn


def _resolve(config_path, seed, workers, out, n_ladder, replicas):
    ladder = None
    if n_ladder is not None:
        try:
            ladder = [int(part) for part in str(n_ladder).split(",") if part.strip()]
        except ValueError as e:
            raise ConfigError(f"--n-ladder: {e}") from e
    overrides = {
        "seed": seed,
        "workers": workers,
        "out": out,
        "n_ladder": ladder,
        "replicas": replicas,
    }
    if config_path is None:
        return default_config(overrides)
    return load_config(config_path, overrides)


def _guarded(body):
    try:
        body()
    except ConfigError as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(1)


def _require_mass(model):
    if model.kernel.mass_bound <= 0:
        raise ConfigError("model: this command needs a positive collision mass bound")


@click.group()
def main():
    """Interacting-jump-system experiments: forward runs, backward graph
    statistics, expansion and covariance estimators, and self tests."""


# ---------------------------------------------------------------------------


@main.command("simulate-forward")
@_common_options
def simulate_forward_cmd(config_path, seed, workers, out, n_ladder, replicas):
    """Forward-system functional estimates and kinetic summary."""

    def body():
        cfg = _resolve(config_path, seed, workers, out, n_ladder, replicas)
        cfg.build_model()
        fs = unary_battery(cfg.horizon)
        qt = fs[0].query_times
        func_rows = []
        energy_rows = []
        for n in cfg.n_ladder:
            exp_id = f"forward-N{n}"
            tasks = [
                (cfg.model_name, cfg.model_params, n, cfg.horizon, cfg.seed, exp_id, s, c)
                for s, c in _chunks(cfg.replicas)
            ]
            parts = _map_tasks(_w_forward, tasks, cfg.workers)
            vals = np.concatenate([p[0] for p in parts])
            energy = np.concatenate([p[1] for p in parts])
            for i, f in enumerate(fs):
                m, se = stats.mean_se(vals[:, i])
                func_rows.append((n, f.name, m, se, cfg.replicas))
            for k, t in enumerate(qt):
                m, se = stats.mean_se(energy[:, k])
                energy_rows.append((n, t, m, se))
        _emit(
            "simulate-forward",
            cfg,
            [
                ("forward_functionals", ("n", "functional", "estimate", "se", "replicas"), func_rows),
                ("forward_energy", ("n", "time", "mean_square", "se"), energy_rows),
            ],
        )

    _guarded(body)


@main.command("graph-stats")
@_common_options
def graph_stats_cmd(config_path, seed, workers, out, n_ladder, replicas):
    """Backward graph loop and size statistics over the N ladder."""

    def body():
        cfg = _resolve(config_path, seed, workers, out, n_ladder, replicas)
        model = cfg.build_model()
        _require_mass(model)
        lam = model.kernel.mass_bound
        summary_rows = []
        loop_rows = []
        member_rows = []
        xs, ys, ses = [], [], []
        for n in cfg.n_ladder:
            if cfg.workers > 1:
                with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
                    loops, members = stats.graph_count_summary(
                        cfg.q, n, lam, cfg.horizon, cfg.replicas, cfg.seed, map_fn=ex.map
                    )
            else:
                loops, members = stats.graph_count_summary(
                    cfg.q, n, lam, cfg.horizon, cfg.replicas, cfg.seed
                )
            r = cfg.replicas
            p0 = float((loops == 0).mean())
            p_ge1 = float((loops >= 1).mean())
            summary_rows.append(
                (n, r, p0, p_ge1, n * p_ge1, float(loops.mean()), float(members.mean()), int(members.max()))
            )
            for l in range(int(loops.max()) + 1):
                c = int((loops == l).sum())
                loop_rows.append((n, l, c, c / r))
            counts = np.bincount(members)
            for k in range(cfg.q, len(counts)):
                if counts[k]:
                    member_rows.append((n, k, int(counts[k]), counts[k] / r))
            if 0.0 < p_ge1 < 1.0:
                xs.append(math.log(n))
                ys.append(math.log(n * p_ge1))
                ses.append(math.sqrt((1.0 - p_ge1) / (p_ge1 * r)))
        if len(xs) >= 2:
            slope, slope_se = stats.slope_fit(np.array(xs), (np.array(ys), np.array(ses)))
        else:
            slope, slope_se = float("nan"), float("nan")

        sizes = stats.yule_sizes(lam, cfg.horizon, cfg.replicas, derive_seed(cfg.seed, "yule-hist"))
        kmax = int(sizes.max())
        emp = np.bincount(sizes, minlength=kmax + 1)[1:] / cfg.replicas
        pmf = stats.geometric_size_pmf(lam, cfg.horizon, kmax)
        tv = 0.5 * (float(np.abs(emp - pmf).sum()) + (1.0 - float(pmf.sum())))
        yule_rows = [(k + 1, emp[k], pmf[k]) for k in range(kmax)]

        _emit(
            "graph-stats",
            cfg,
            [
                (
                    "graph_summary",
                    ("n", "replicas", "p_loops0", "p_loops_ge1", "n_times_p_ge1", "mean_loops", "mean_members", "max_members"),
                    summary_rows,
                ),
                ("loop_hist", ("n", "loops", "count", "p_hat"), loop_rows),
                ("member_hist", ("n", "members", "count", "p_hat"), member_rows),
                ("yule_size_hist", ("size", "p_hat", "p_geometric"), yule_rows),
            ],
            extra={"nP_ge1_slope": slope, "nP_ge1_slope_se": slope_se, "yule_size_tv": tv},
        )

    _guarded(body)


@main.command("expansion")
@_common_options
def expansion_cmd(config_path, seed, workers, out, n_ladder, replicas):
    """Loop-count expansion coefficients with moment bounds."""

    def body():
        cfg = _resolve(config_path, seed, workers, out, n_ladder, replicas)
        model = cfg.build_model()
        _require_mass(model)
        F = _battery_pick(cfg.battery, cfg.functional, cfg.horizon)
        if F.arity != cfg.q:
            raise ConfigError(
                f"experiment.functional: '{F.name}' has arity {F.arity}, config q is {cfg.q}"
            )
        rows = []
        recon_rows = []
        for n in cfg.n_ladder:
            exp_id = f"expansion-N{n}"
            tasks = [
                (cfg.model_name, cfg.model_params, cfg.battery, F.name, cfg.q, n,
                 cfg.horizon, cfg.seed, exp_id, s, c)
                for s, c in _chunks(cfg.replicas)
            ]
            parts = _map_tasks(_w_delta, tasks, cfg.workers)
            sample = (
                np.concatenate([p[0] for p in parts]),
                np.concatenate([p[1] for p in parts]),
            )
            rep = stats.estimate_delta(
                model, cfg.q, n, cfg.horizon, F, cfg.l_max, cfg.replicas, cfg.seed,
                experiment_id=exp_id, sample=sample,
            )
            for l, d in enumerate(rep.delta):
                rows.append(
                    (n, str(l), d.value, d.se, rep.bin_counts[l], rep.bin_means[l],
                     rep.loop_moment_bounds[l], rep.loop_moment_bound_ses[l])
                )
            rows.append(
                (n, "remainder", rep.remainder.value, rep.remainder.se,
                 rep.bin_counts[-1], rep.bin_means[-1], "", "")
            )
            recon_rows.append((n, rep.sample_mean, rep.reconstructed_mean, rep.reconstruction_gap))
        _emit(
            "expansion",
            cfg,
            [
                (
                    "expansion_delta",
                    ("n", "order", "delta", "se", "bin_count", "bin_mean", "moment_bound", "bound_se"),
                    rows,
                ),
                (
                    "expansion_reconstruction",
                    ("n", "sample_mean", "reconstructed_mean", "gap"),
                    recon_rows,
                ),
            ],
            extra={"functional": F.name, "l_max": cfg.l_max},
        )

    _guarded(body)


def _centered_battery(cfg, model):
    us = unary_battery(cfg.horizon)
    qt = us[0].query_times
    sample = marginal_paths(
        model, cfg.centering_replicas, cfg.horizon, qt, derive_seed(cfg.seed, "centering")
    )
    centered = [center_functional(f, sample) for f in us]
    return us, centered, sample


def _wick_shared(cfg, model, qt):
    tasks = [
        (cfg.model_name, cfg.model_params, cfg.horizon, tuple(qt), cfg.seed, "wick", s, c)
        for s, c in _chunks(cfg.replicas)
    ]
    parts = _map_tasks(_w_wick, tasks, cfg.workers)
    weights = np.concatenate([p[0] for p in parts])
    paths = np.concatenate([p[1] for p in parts])
    return weights, paths


@main.command("wick")
@_common_options
def wick_cmd(config_path, seed, workers, out, n_ladder, replicas):
    """Covariance corrections on coupled limit pairs."""

    def body():
        cfg = _resolve(config_path, seed, workers, out, n_ladder, replicas)
        model = cfg.build_model()
        _require_mass(model)
        lam = model.kernel.mass_bound
        _, centered, _ = _centered_battery(cfg, model)
        fs = [c for c, _ in centered] + [zero_unary(cfg.horizon)]
        records = [r for _, r in centered]
        qt = fs[0].query_times
        shared = _wick_shared(cfg, model, qt)
        rows = []
        for i in range(len(fs)):
            for j in range(i, len(fs)):
                f, g = fs[i], fs[j]
                rep = stats.estimate_wick_direct(
                    model, f, g, cfg.horizon, cfg.replicas, cfg.seed,
                    experiment_id="wick", _shared=shared,
                )
                rows.append(
                    (f.name, g.name, rep.value, rep.se,
                     stats.wick_bound(f, g, lam, cfg.horizon),
                     rep.details["weight_mean"])
                )
        center_rows = [
            (f.name, r.offset, r.se, r.n_sample) for (f, _), r in zip(centered, records)
        ]
        _emit(
            "wick",
            cfg,
            [
                ("wick_direct", ("f", "g", "v_direct", "se", "bound", "weight_mean"), rows),
                ("centering", ("functional", "offset", "offset_se", "sample_size"), center_rows),
            ],
        )

    _guarded(body)


@main.command("clt")
@_common_options
def clt_cmd(config_path, seed, workers, out, n_ladder, replicas):
    """Fluctuation-field normality check against the assembled covariance."""

    def body():
        from scipy import stats as sps

        cfg = _resolve(config_path, seed, workers, out, n_ladder, replicas)
        model = cfg.build_model()
        _require_mass(model)
        us, centered, sample = _centered_battery(cfg, model)
        fs = [c for c, _ in centered]
        offsets = [r.offset for _, r in centered]
        second = stats.marginal_second_moments(fs, sample)
        qt = fs[0].query_times
        shared = _wick_shared(cfg, model, qt)
        k = len(fs)
        v = np.empty((k, k))
        for i in range(k):
            for j in range(i, k):
                rep = stats.estimate_wick_direct(
                    model, fs[i], fs[j], cfg.horizon, cfg.replicas, cfg.seed,
                    experiment_id="wick", _shared=shared,
                )
                v[i, j] = v[j, i] = rep.value
        cov = stats.clt_covariance(fs, v, second)
        crit = accept.KS_1PCT / math.sqrt(cfg.replicas)
        rows = []
        for n in cfg.n_ladder:
            for i, f in enumerate(fs):
                k_hat = float(cov.matrix[i, i])
                if k_hat <= 0:
                    rows.append((n, f.name, k_hat, float("nan"), crit, False))
                    continue
                exp_id = f"clt-N{n}-{i}"
                tasks = [
                    (cfg.model_name, cfg.model_params, i, offsets[i], n, cfg.horizon,
                     cfg.seed, exp_id, s, c)
                    for s, c in _chunks(cfg.replicas)
                ]
                parts = _map_tasks(_w_clt, tasks, cfg.workers)
                vals = np.concatenate(parts)
                ks = float(sps.kstest(vals, sps.norm(loc=0.0, scale=math.sqrt(k_hat)).cdf).statistic)
                rows.append((n, f.name, k_hat, ks, crit, ks < crit))
        _emit(
            "clt",
            cfg,
            [("clt_normality", ("n", "functional", "k_hat", "ks_stat", "ks_critical", "passed"), rows)],
            extra={
                "covariance": cov.matrix,
                "second_moments": cov.second_moments,
                "v_matrix": cov.v_matrix,
            },
        )

    _guarded(body)


@main.command("selftest")
@click.option("--quick/--full", default=False, help="Shrink replica counts for a smoke run.")
@click.option("--criterion", "criteria", type=int, multiple=True, help="Run only these criteria.")
@click.option("--seed", type=int, default=accept.DEFAULT_SEED, help="Seed for the checks.")
def selftest_cmd(quick, criteria, seed):
    """Run the acceptance criteria; exit 2 on any failure."""
    nums = sorted(set(criteria)) if criteria else sorted(accept.CRITERIA)
    bad = [n for n in nums if n not in accept.CRITERIA]
    if bad:
        click.echo(f"config error: unknown criterion {bad}", err=True)
        sys.exit(1)
    failed = 0
    for num in nums:
        res = accept.run_criterion(num, seed=seed, quick=quick)
        click.echo(accept.format_result(res))
        if not res.passed:
            failed += 1
    click.echo(f"{len(nums) - failed}/{len(nums)} criteria passed")
    if failed:
        sys.exit(2)


if __name__ == "__main__":
    main()
