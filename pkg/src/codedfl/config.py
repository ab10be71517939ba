"""Experiment configuration: TOML files, named presets, and overrides.

A run is described by five TOML tables: [experiment], [channel],
[quantizer], [code], [data]. Values are layered in increasing precedence:
built-in defaults, then a named preset, then the config file, then the
CODED_FL_SEED environment variable (master seed only), then explicit CLI
overrides. Every layer is validated with field-level messages, and the
fully resolved mapping is hashed so a manifest can pin the exact run.
"""

import copy
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .channel import ChannelParams
from .data import (
    LabeledData,
    load_mnist,
    mixture_means,
    partition_by_class,
    partition_iid,
    synthetic_mixture,
)
from .fl_core import MlpObjective, TrainingHyperparams
from .mlp import MlpSpec
from .protocol import METHODS, ExperimentConfig
from .rng import substream

SEED_ENV_VAR = "CODED_FL_SEED"


class ConfigError(ValueError):
    """Raised when a config file, preset name, or override is invalid."""


_DEFAULTS = {
    "experiment": {
        "n_clients": 10,
        "rounds": 20,
        "local_steps": 5,
        "batch_size": 1024,
        "learning_rate": 0.01,
        "num_trials": 1,
        "master_seed": 0,
        "retry_limit": 10,
        "methods": list(METHODS),
        "quantize": True,
        "relaying": True,
    },
    "channel": {
        "snr": 3.0,
        "rate": 0.6,
        "sigma2": 1.0,
    },
    "quantizer": {
        "bits": 8,
        "margin": 1.5,
    },
    "code": {
        "field_order": 256,
    },
    "data": {
        "source": "synthetic",
        "subset_size": 2000,
        "test_size": 1000,
        "n_classes": 10,
        "n_features": 8,
        "classes_per_client": "iid",
        "separation": 4.5,
        "noise": 0.7,
        "hidden": 32,
        "seed": 0,
    },
}

# The three reference operating points share every knob except the
# partition; num_trials stays a run-time choice (--trials).
PRESETS = {
    "reference-iid": {"data": {"classes_per_client": "iid"}},
    "reference-5class": {"data": {"classes_per_client": 5}},
    "reference-1class": {"data": {"classes_per_client": 1}},
}

# Keys whose presence in a later layer evicts the other spelling.
_EXCLUSIVE = {
    ("channel", "snr"): ("channel", "snr_db"),
    ("channel", "snr_db"): ("channel", "snr"),
}


def _merge_layer(merged: dict, layer: dict, origin: str) -> None:
    for section, table in layer.items():
        if section not in _DEFAULTS:
            raise ConfigError(f"{origin}: unknown section [{section}]")
        if not isinstance(table, dict):
            raise ConfigError(f"{origin}: [{section}] must be a table")
        for key, value in table.items():
            rival = _EXCLUSIVE.get((section, key))
            if rival is not None:
                if rival[1] in table:
                    raise ConfigError(
                        f"{origin}: {rival[0]}.{rival[1]} and {section}.{key} "
                        "are mutually exclusive"
                    )
                merged[rival[0]].pop(rival[1], None)
            merged.setdefault(section, {})[key] = value


class _Table:
    """Typed, destructive reads from one section; leftovers are typos."""

    def __init__(self, name: str, values: dict):
        self.name = name
        self.values = dict(values)

    def _fail(self, key, want, got):
        raise ConfigError(f"{self.name}.{key}: expected {want}, got {got!r}")

    def _take(self, key, default):
        return self.values.pop(key, default)

    def take_int(self, key, default=None, minimum=None):
        v = self._take(key, default)
        if v is None:
            return None
        if isinstance(v, bool) or not isinstance(v, int):
            self._fail(key, "an integer", v)
        if minimum is not None and v < minimum:
            self._fail(key, f"an integer >= {minimum}", v)
        return v

    def take_float(self, key, default=None, minimum=None, maximum=None):
        v = self._take(key, default)
        if v is None:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self._fail(key, "a number", v)
        v = float(v)
        if minimum is not None and v < minimum:
            self._fail(key, f"a number >= {minimum}", v)
        if maximum is not None and v > maximum:
            self._fail(key, f"a number <= {maximum}", v)
        return v

    def take_bool(self, key, default=None):
        v = self._take(key, default)
        if v is None:
            return None
        if not isinstance(v, bool):
            self._fail(key, "a boolean", v)
        return v

    def take_str(self, key, default=None, choices=None):
        v = self._take(key, default)
        if v is None:
            return None
        if not isinstance(v, str):
            self._fail(key, "a string", v)
        if choices is not None and v not in choices:
            self._fail(key, f"one of {sorted(choices)}", v)
        return v

    def finish(self):
        if self.values:
            stray = sorted(self.values)[0]
            raise ConfigError(f"{self.name}.{stray}: unknown key")


@dataclass(frozen=True)
class DataConfig:
    """Resolved [data] table: dataset source, scale, and partition shape."""

    source: str
    path: str | None
    subset_size: int
    test_size: int
    n_classes: int
    n_features: int
    classes_per_client: object
    separation: float
    noise: float
    hidden: int
    seed: int


@dataclass(frozen=True)
class FullConfig:
    """Everything a run needs, plus the canonical mapping it came from."""

    experiment: ExperimentConfig
    data: DataConfig
    resolved: dict

    @property
    def config_hash(self) -> str:
        return config_hash(self.resolved)


def canonical_json(mapping: dict) -> str:
    return json.dumps(mapping, sort_keys=True, separators=(",", ":"))


def config_hash(mapping: dict) -> str:
    return hashlib.sha256(canonical_json(mapping).encode()).hexdigest()


def _resolve_channel(table: _Table) -> float:
    override = table.take_float("p_e_override", minimum=0.0, maximum=1.0)
    snr = table.take_float("snr", minimum=0.0)
    snr_db = table.take_float("snr_db")
    rate = table.take_float("rate", default=0.6)
    sigma2 = table.take_float("sigma2", default=1.0)
    table.finish()
    if override is not None:
        return override
    if snr is not None and snr_db is not None:
        raise ConfigError("channel.snr and channel.snr_db are mutually exclusive")
    if snr_db is not None:
        params = ChannelParams.from_db(snr_db, rate, sigma2)
    else:
        params = ChannelParams(snr if snr is not None else 3.0, rate, sigma2)
    return params.p_e


def _resolve_data(table: _Table) -> DataConfig:
    cpc = table.values.get("classes_per_client", "iid")
    if isinstance(cpc, str):
        table.take_str("classes_per_client", default="iid", choices={"iid"})
    else:
        cpc = table.take_int("classes_per_client", minimum=1)
    cfg = DataConfig(
        source=table.take_str("source", default="synthetic",
                              choices={"synthetic", "mnist"}),
        path=table.take_str("path"),
        subset_size=table.take_int("subset_size", default=2000, minimum=1),
        test_size=table.take_int("test_size", default=1000, minimum=1),
        n_classes=table.take_int("n_classes", default=10, minimum=2),
        n_features=table.take_int("n_features", default=20, minimum=1),
        classes_per_client=cpc,
        separation=table.take_float("separation", default=3.0, minimum=0.0),
        noise=table.take_float("noise", default=1.0, minimum=0.0),
        hidden=table.take_int("hidden", default=32, minimum=1),
        seed=table.take_int("seed", default=0, minimum=0),
    )
    table.finish()
    if cfg.source == "mnist" and cfg.path is None:
        raise ConfigError("data.path: required when data.source = 'mnist'")
    if cfg.source == "synthetic" and cfg.subset_size % cfg.n_classes != 0:
        raise ConfigError(
            "data.subset_size: must be divisible by data.n_classes "
            "for the synthetic source"
        )
    if cfg.source == "synthetic" and cfg.test_size % cfg.n_classes != 0:
        raise ConfigError(
            "data.test_size: must be divisible by data.n_classes "
            "for the synthetic source"
        )
    return cfg


def _validate(merged: dict) -> FullConfig:
    exp = _Table("experiment", merged["experiment"])
    methods = exp.values.pop("methods", list(METHODS))
    if isinstance(methods, str):
        methods = [m.strip() for m in methods.split(",") if m.strip()]
    if not isinstance(methods, list) or not methods:
        raise ConfigError("experiment.methods: expected a non-empty list")
    for m in methods:
        if m not in METHODS:
            raise ConfigError(
                f"experiment.methods: {m!r} is not one of {list(METHODS)}"
            )
    if len(set(methods)) != len(methods):
        raise ConfigError("experiment.methods: duplicates not allowed")

    hp = TrainingHyperparams(
        local_steps=exp.take_int("local_steps", default=5, minimum=1),
        batch_size=exp.take_int("batch_size", default=1024, minimum=1),
        learning_rate=exp.take_float("learning_rate", default=0.01, minimum=0.0),
        rounds=exp.take_int("rounds", default=20, minimum=1),
    )
    n_clients = exp.take_int("n_clients", default=10, minimum=2)
    num_trials = exp.take_int("num_trials", default=1, minimum=1)
    master_seed = exp.take_int("master_seed", default=0, minimum=0)
    retry_limit = exp.take_int("retry_limit", default=10, minimum=1)
    quantize = exp.take_bool("quantize", default=True)
    relaying = exp.take_bool("relaying", default=True)
    exp.finish()

    p_e = _resolve_channel(_Table("channel", merged["channel"]))

    quant = _Table("quantizer", merged["quantizer"])
    bits = quant.take_int("bits", default=8, minimum=1)
    lower = quant.take_float("lower")
    upper = quant.take_float("upper")
    margin = quant.take_float("margin", default=1.5)
    quant.finish()
    if (lower is None) != (upper is None):
        raise ConfigError(
            "quantizer.lower and quantizer.upper must be given together"
        )

    code = _Table("code", merged["code"])
    field_order = code.take_int("field_order", default=256, minimum=2)
    code.finish()

    data_cfg = _resolve_data(_Table("data", merged["data"]))
    if data_cfg.classes_per_client != "iid":
        if (n_clients * data_cfg.classes_per_client) % data_cfg.n_classes != 0:
            raise ConfigError(
                "data.classes_per_client: "
                f"{n_clients} clients x {data_cfg.classes_per_client} classes "
                f"cannot tile {data_cfg.n_classes} classes evenly"
            )

    try:
        experiment = ExperimentConfig(
            n_clients=n_clients,
            hp=hp,
            p_e=p_e,
            bits=bits,
            field_order=field_order,
            retry_limit=retry_limit,
            master_seed=master_seed,
            num_trials=num_trials,
            methods=tuple(methods),
            quantize=quantize,
            relaying=relaying,
            quantizer_lower=lower,
            quantizer_upper=upper,
            quantizer_margin=margin,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    resolved = copy.deepcopy(merged)
    resolved["experiment"]["methods"] = list(methods)
    resolved["channel"]["p_e"] = p_e
    return FullConfig(experiment=experiment, data=data_cfg, resolved=resolved)


def parse_config(
    path=None,
    preset: str | None = None,
    overrides: dict | None = None,
    env: dict | None = None,
) -> FullConfig:
    """Layer defaults, preset, file, environment, and overrides, then validate.

    ``overrides`` maps dotted keys ("channel.snr") to already-typed values,
    as produced by the CLI. Missing files and unknown presets raise
    ConfigError naming the offender.
    """
    merged = copy.deepcopy(_DEFAULTS)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(
                f"unknown preset {preset!r}; available: {sorted(PRESETS)}"
            )
        _merge_layer(merged, PRESETS[preset], f"preset {preset}")
    if path is not None:
        file_path = Path(path)
        if not file_path.exists():
            raise ConfigError(f"config file not found: {file_path}")
        try:
            with open(file_path, "rb") as fh:
                loaded = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{file_path}: {exc}") from exc
        _merge_layer(merged, loaded, str(file_path))

    env_map = os.environ if env is None else env
    if SEED_ENV_VAR in env_map:
        raw_seed = env_map[SEED_ENV_VAR]
        try:
            merged["experiment"]["master_seed"] = int(raw_seed)
        except ValueError as exc:
            raise ConfigError(
                f"{SEED_ENV_VAR}: expected an integer, got {raw_seed!r}"
            ) from exc

    if overrides:
        layer: dict = {}
        for dotted, value in overrides.items():
            if value is None:
                continue
            section, _, key = dotted.partition(".")
            if not key or section not in _DEFAULTS:
                raise ConfigError(f"unknown override {dotted!r}")
            layer.setdefault(section, {})[key] = value
        _merge_layer(merged, layer, "override")

    return _validate(merged)


@dataclass(frozen=True)
class Pipeline:
    """Instantiated run inputs: model, objective, shards, and eval sets."""

    model_spec: MlpSpec
    objective: MlpObjective
    partition: object
    train: LabeledData
    test: LabeledData


def build_pipeline(cfg: FullConfig) -> Pipeline:
    """Materialize datasets and the model described by a FullConfig."""
    d = cfg.data
    if d.source == "synthetic":
        # train and test must share the class means to be one distribution
        means = mixture_means(
            d.n_classes, d.n_features, d.separation,
            substream(d.seed, "data", "means"),
        )
        train = synthetic_mixture(
            d.subset_size, d.n_classes, d.n_features,
            substream(d.seed, "data", "train"),
            noise=d.noise, means=means,
        )
        test = synthetic_mixture(
            d.test_size, d.n_classes, d.n_features,
            substream(d.seed, "data", "test"),
            noise=d.noise, means=means,
        )
        n_classes, n_features = d.n_classes, d.n_features
    else:
        train = load_mnist(d.path, "train", limit=d.subset_size)
        test = load_mnist(d.path, "test", limit=d.test_size)
        n_features = train.x.shape[1]
        n_classes = int(max(train.y.max(), test.y.max())) + 1

    part_rng = substream(d.seed, "data", "partition")
    if d.classes_per_client == "iid":
        partition = partition_iid(train, cfg.experiment.n_clients, part_rng)
    else:
        partition = partition_by_class(
            train, cfg.experiment.n_clients, d.classes_per_client,
            n_classes, part_rng,
        )

    model_spec = MlpSpec(
        n_features=n_features, n_classes=n_classes, hidden=d.hidden
    )
    return Pipeline(
        model_spec=model_spec,
        objective=MlpObjective(model_spec),
        partition=partition,
        train=train,
        test=test,
    )
