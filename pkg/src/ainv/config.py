"""Run configuration: one JSON document, every default filled in.

Unknown keys and wrongly typed values are rejected with the dotted path of
the offending field.
"""

import copy
import json
from dataclasses import dataclass
from pathlib import Path

from .adapt import AdaptConfig
from .fields import Grid
from .nn import NetConfig, TrainConfig
from .priors import make_prior
from .scatter import ScatterConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


DISK_DEFAULTS = {
    "n_min": 1, "n_max": 2, "r_min": 0.15, "r_max": 0.4, "a_min": 0.5, "a_max": 1.5,
    "eps_m": None, "field_order": None, "scales": [0.15, 0.05, 0.15], "decay": 0.7,
    "refine": True, "min_peak": 0.15,
}
FOURIER_DEFAULTS = {
    "n_modes": 3, "margin": 0.39269908169872414, "eps_m": None, "field_order": None,
    "low_range": [-0.2, -0.1], "high_range": [2.0, 3.0], "c_sigma": 2.0,
}

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "seed": 0,
    "out": "run",
    "grid": {"n": 64, "order": 5},
    "scatter": {
        "k": 5.0, "n_dirs": 16, "n_recv": 16, "radius": 10.0, "mode": "ls", "ls_tol": 1e-8,
        "ls_max_iter": 2000, "restart": 50, "noise_std": 0.0, "apply": "fft",
    },
    "prior": {"kind": "disk", "params": {}},
    "net": {"n_layers": 2, "channels": 16, "kernel": 5, "padding": 2, "pool": 2, "stride": 2,
            "fc_hidden": [128, 64]},
    "train": {"lr": 0.1, "momentum": 0.9, "batch_size": 100, "max_epochs": 500, "patience": 20},
    "adapt": {
        "n_base_model": 300, "n_round": 3, "n_adapt": 50, "n_base": 100, "stopping": "fixed",
        "plateau_delta": 0.02, "plateau_window": 2, "fine_tune_lr": 0.01, "val_fraction": 0.2,
        "measure": True,
    },
    "data": {"n_samples": 300, "split": "base"},
    "baseline": {"sizes": [100, 300, 600], "n_test": 10},
}

SPLITS = ("base", "val", "test")


def _type_ok(default, value):
    if default is None:
        return value is None or isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, str):
        return isinstance(value, str)
    if isinstance(default, list):
        return isinstance(value, list)
    return True


def _merge(defaults, given, path):
    if not isinstance(given, dict):
        raise ConfigError(path, "expected an object")
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        p = f"{path}.{key}"
        if key not in defaults:
            raise ConfigError(p, "unknown key")
        d = defaults[key]
        if isinstance(d, dict) and key != "params":
            out[key] = _merge(d, value, p)
        elif key == "params":
            if not isinstance(value, dict):
                raise ConfigError(p, "expected an object")
            out[key] = copy.deepcopy(value)
        else:
            if not _type_ok(d, value):
                raise ConfigError(p, f"expected {type(d).__name__}, got {type(value).__name__}")
            out[key] = float(value) if isinstance(d, float) else copy.deepcopy(value)
    return out


def _prior_params(prior, path):
    kind = prior["kind"]
    if kind == "disk":
        base = DISK_DEFAULTS
    elif kind == "fourier":
        base = FOURIER_DEFAULTS
    else:
        raise ConfigError(f"{path}.kind", f"unknown prior {kind!r}")
    return _merge(base, prior["params"], f"{path}.params")


def materialize(doc) -> dict:
    """Validate ``doc`` and return it with every default filled in."""
    if not isinstance(doc, dict):
        raise ConfigError("config", "expected an object")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError("config.schema_version", f"unsupported version {version!r}")
    cfg = _merge(DEFAULTS, doc, "config")
    cfg["prior"]["params"] = _prior_params(cfg["prior"], "config.prior")
    if cfg["data"]["split"] not in SPLITS:
        raise ConfigError("config.data.split", f"must be one of {SPLITS}")
    # surface dataclass validation with the section path
    for section, build in (("scatter", scatter_config), ("net", net_config), ("train", train_config),
                           ("adapt", adapt_config), ("grid", grid), ("prior", prior)):
        try:
            build(cfg)
        except ConfigError:
            raise
        except (ValueError, TypeError) as e:
            raise ConfigError(f"config.{section}", str(e)) from e
    return cfg


def load_config(path=None, overrides=None) -> dict:
    doc = {} if path is None else json.loads(Path(path).read_text())
    if overrides:
        doc = {**doc, **overrides}
    return materialize(doc)


def scatter_config(cfg) -> ScatterConfig:
    return ScatterConfig(**cfg["scatter"])


def grid(cfg) -> Grid:
    g = Grid(cfg["grid"]["n"])
    if not 1 <= cfg["grid"]["order"] <= g.n:
        raise ValueError("order must lie in [1, n]")
    return g


def net_config(cfg) -> NetConfig:
    n = dict(cfg["net"])
    hidden = n.pop("fc_hidden")
    s = cfg["scatter"]
    return NetConfig(input_shape=(s["n_dirs"], s["n_recv"]), fc=(*hidden, cfg["grid"]["order"] ** 2), **n)


def train_config(cfg, lr=None, seed=0) -> TrainConfig:
    t = dict(cfg["train"])
    if lr is not None:
        t["lr"] = lr
    return TrainConfig(seed=seed, **t)


def adapt_config(cfg) -> AdaptConfig:
    return AdaptConfig(**cfg["adapt"])


def prior(cfg):
    params = dict(cfg["prior"]["params"])
    for key in ("scales", "low_range", "high_range"):
        if key in params:
            params[key] = tuple(params[key])
    return make_prior(cfg["prior"]["kind"], **params)


@dataclass(frozen=True)
class Built:
    """Typed pieces of a materialized configuration."""

    raw: dict
    scatter: ScatterConfig
    grid: Grid
    order: int
    net: NetConfig
    adapt: AdaptConfig
    prior: object
    seed: int


def build(cfg) -> Built:
    return Built(
        cfg, scatter_config(cfg), grid(cfg), cfg["grid"]["order"], net_config(cfg),
        adapt_config(cfg), prior(cfg), int(cfg["seed"]),
    )
