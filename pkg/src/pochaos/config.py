"""Experiment configuration: TOML schema, validation, hashing, manifests.

Schema (all keys optional unless noted; flags override file values):

    [model]
    name = "kac"            # kac | maxwell | linear-toy (required)
    mode = "bird"           # must match the builtin model's jump style
    [model.params]          # forwarded to the model constructor
    lam = 1.0

    [experiment]
    q = 2
    horizon = 1.0
    n_ladder = [100, 1000]
    replicas = 10000
    battery = "pair"        # pair | unary
    functional = ""         # battery entry for single-functional commands
    l_max = 2
    centering_replicas = 1000000

    [run]
    seed = 20260814
    workers = 1
    out = "out"
"""

import dataclasses
import datetime
import hashlib
import json
from dataclasses import dataclass, field

try:
    import tomllib as _toml
except ModuleNotFoundError:
    import tomli as _toml

from . import __version__
from .battery import named_battery
from .models import BUILTIN_MODELS, make_model

SEED_RULE = "replica seed = blake2b(master seed, experiment id, replica index)"


class ConfigError(ValueError):
    """Invalid configuration; message names the offending field."""


@dataclass(frozen=True)
class ExperimentConfig:
    model_name: str
    mode: str
    model_params: dict
    q: int
    horizon: float
    n_ladder: tuple
    replicas: int
    battery: str
    functional: str
    l_max: int
    centering_replicas: int
    seed: int
    workers: int
    out: str

    def build_model(self):
        try:
            model = make_model(self.model_name, **self.model_params)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"model.params: {e}") from e
        if model.mode != self.mode:
            raise ConfigError(
                f"model.mode: '{self.mode}' does not match builtin '{self.model_name}' ({model.mode})"
            )
        return model

    def battery_functionals(self):
        return named_battery(self.battery, self.horizon)

    def pick_functional(self):
        fs = self.battery_functionals()
        if not self.functional:
            return fs[0]
        for f in fs:
            if f.name == self.functional:
                return f
        names = ", ".join(f.name for f in fs)
        raise ConfigError(f"experiment.functional: '{self.functional}' not in battery ({names})")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["n_ladder"] = list(self.n_ladder)
        return d


DEFAULTS = {
    "mode": None,  # defaults to the builtin model's own mode
    "q": 2,
    "horizon": 1.0,
    "n_ladder": (100, 1000),
    "replicas": 10_000,
    "battery": "pair",
    "functional": "",
    "l_max": 2,
    "centering_replicas": 1_000_000,
    "seed": 20260814,
    "workers": 1,
    "out": "out",
}


def _require(cond, message):
    if not cond:
        raise ConfigError(message)


def _get(section, key, expected, where, default=None):
    if key not in section:
        return default
    v = section[key]
    if expected is float and isinstance(v, int) and not isinstance(v, bool):
        v = float(v)
    _require(isinstance(v, expected) and not isinstance(v, bool), f"{where}.{key}: expected {expected.__name__}")
    return v


def build_config(raw, overrides=None):
    """Validate a raw mapping (parsed TOML) into an ExperimentConfig.

    overrides maps flag names (seed, workers, out, n_ladder, replicas) to
    values that take precedence over the file.
    """
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    _require(isinstance(raw, dict), "config root must be a table")
    for key in raw:
        _require(key in ("model", "experiment", "run"), f"unknown section '{key}'")

    model_sec = raw.get("model", {})
    _require(isinstance(model_sec, dict), "model: expected a table")
    name = _get(model_sec, "name", str, "model")
    _require(name is not None, "model.name: required")
    _require(name in BUILTIN_MODELS, f"model.name: unknown model '{name}' (have {sorted(BUILTIN_MODELS)})")
    params = model_sec.get("params", {})
    _require(isinstance(params, dict), "model.params: expected a table")
    for k, v in params.items():
        _require(isinstance(v, (int, float)) and not isinstance(v, bool), f"model.params.{k}: expected a number")
        _require(v >= 0, f"model.params.{k}: must be nonnegative")
    mode = _get(model_sec, "mode", str, "model")

    exp = raw.get("experiment", {})
    _require(isinstance(exp, dict), "experiment: expected a table")
    q = _get(exp, "q", int, "experiment", DEFAULTS["q"])
    horizon = _get(exp, "horizon", float, "experiment", DEFAULTS["horizon"])
    n_ladder = exp.get("n_ladder", list(DEFAULTS["n_ladder"]))
    replicas = _get(exp, "replicas", int, "experiment", DEFAULTS["replicas"])
    battery = _get(exp, "battery", str, "experiment", DEFAULTS["battery"])
    functional = _get(exp, "functional", str, "experiment", DEFAULTS["functional"])
    l_max = _get(exp, "l_max", int, "experiment", DEFAULTS["l_max"])
    centering = _get(exp, "centering_replicas", int, "experiment", DEFAULTS["centering_replicas"])

    run = raw.get("run", {})
    _require(isinstance(run, dict), "run: expected a table")
    seed = _get(run, "seed", int, "run", DEFAULTS["seed"])
    workers = _get(run, "workers", int, "run", DEFAULTS["workers"])
    out = _get(run, "out", str, "run", DEFAULTS["out"])

    if "seed" in overrides:
        seed = int(overrides["seed"])
    if "workers" in overrides:
        workers = int(overrides["workers"])
    if "out" in overrides:
        out = str(overrides["out"])
    if "replicas" in overrides:
        replicas = int(overrides["replicas"])
    if "n_ladder" in overrides:
        n_ladder = list(overrides["n_ladder"])

    _require(isinstance(n_ladder, (list, tuple)) and len(n_ladder) >= 1, "experiment.n_ladder: need at least one N")
    for n in n_ladder:
        _require(isinstance(n, int) and not isinstance(n, bool), "experiment.n_ladder: entries must be integers")
        _require(n >= 2, "experiment.n_ladder: every N must be >= 2")
    _require(
        all(a < b for a, b in zip(n_ladder, n_ladder[1:])),
        "experiment.n_ladder: must be strictly increasing",
    )
    _require(q >= 1, "experiment.q: must be >= 1")
    _require(q <= min(n_ladder), "experiment.q: must be <= min of the N ladder")
    _require(horizon > 0, "experiment.horizon: must be positive")
    _require(replicas >= 1, "experiment.replicas: must be >= 1")
    _require(battery in ("pair", "unary"), "experiment.battery: must be 'pair' or 'unary'")
    _require(l_max >= 0, "experiment.l_max: must be >= 0")
    _require(centering >= 2, "experiment.centering_replicas: must be >= 2")
    _require(seed >= 0 and seed < 2**64, "run.seed: must fit in u64")
    _require(workers >= 1, "run.workers: must be >= 1")

    try:
        model = make_model(name, **params)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"model.params: {e}") from e
    if mode is None:
        mode = model.mode
    cfg = ExperimentConfig(
        model_name=name,
        mode=mode,
        model_params=dict(params),
        q=q,
        horizon=horizon,
        n_ladder=tuple(n_ladder),
        replicas=replicas,
        battery=battery,
        functional=functional,
        l_max=l_max,
        centering_replicas=centering,
        seed=seed,
        workers=workers,
        out=out,
    )
    cfg.build_model()  # validates declared mode against the builtin
    return cfg


def load_config(path, overrides=None):
    try:
        with open(path, "rb") as fh:
            raw = _toml.load(fh)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except _toml.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    try:
        return build_config(raw, overrides)
    except ConfigError as e:
        raise ConfigError(f"{path}: {e}") from e


def default_config(overrides=None):
    return build_config({"model": {"name": "kac", "params": {"lam": 1.0}}}, overrides)


def repro_config(cfg):
    """Config fields that determine emitted numbers.

    Execution details (output directory, worker count) are dropped: two runs
    that agree on this dict must emit bit-identical numbers.
    """
    d = cfg.to_dict()
    d.pop("out")
    d.pop("workers")
    return d


def config_hash(cfg):
    """sha256 over the canonical JSON form of the number-determining config fields."""
    blob = json.dumps(repro_config(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class RunManifest:
    command: str
    config: dict
    config_hash: str
    code_version: str
    seed_rule: str
    master_seed: int
    workers: int
    created_at: str
    outputs: tuple = field(default_factory=tuple)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["outputs"] = list(self.outputs)
        return d


def make_manifest(command, cfg, outputs=()):
    return RunManifest(
        command=command,
        config=cfg.to_dict(),
        config_hash=config_hash(cfg),
        code_version=__version__,
        seed_rule=SEED_RULE,
        master_seed=cfg.seed,
        workers=cfg.workers,
        created_at=datetime.datetime.now(datetime.timezone.utc).isoformat(),
        outputs=tuple(outputs),
    )
