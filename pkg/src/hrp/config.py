"""Run configuration: typed defaults, TOML loading and flat-key overrides."""

from __future__ import annotations

import copy
import json
import zlib

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .dataio import SyntheticSpec
from .preprocess import DEFAULT_SENSORS, WINDOW_LENGTHS, ConfigError, PreprocessConfig
from .temporal import TrainConfig

DATASETS = ("FD001", "FD002", "FD003", "FD004", "synthetic")
MODES = ("per-engine", "per-window")

DEFAULTS = {
    "seed": 0,
    "out": "hrp-run",
    "data": {
        "dataset": "FD001",
        "dir": ".",
    },
    "synthetic": {
        "n_engines": 40,
        "n_test_engines": 0,  # 0: same as n_engines
        "n_sensors": 21,
        "life_min": 128,
        "life_max": 300,
        "onset_fraction": 0.4,
        "noise_scale": 0.3,
        "drift_kind": "mixed",
        "drift_sensors": [],  # empty: every non-constant sensor drifts
    },
    "preprocess": {
        "selected_sensors": list(DEFAULT_SENSORS),
        "rul_cap": 125,
        "smoothing_s": 3.0,
        "window_length": 0,  # 0: per-dataset default
        "stride": 1,
        "norm_fit": "train",
    },
    "train": {
        "hidden_size": 32,
        "learning_rate": 1e-2,
        "epochs": 50,
        "batch_size": 256,
        "huber_delta": 1.0,
        "optimizer": "adam",
        "readout_bias_init": "label_mean",
    },
    "gp": {
        "amplitude": 0.0,  # 0: std of the training targets
        "length_scale": 1.0,
        "noise_std": 0.0,  # 0: a tenth of the target std
        "n_max": 2000,  # 0: use every training window
        "jitter": -1.0,  # negative: automatic ladder
        "optimize": True,
        "restarts": 8,
        "evals_per_restart": 200,
        "interval_noise": True,
    },
    "predict": {
        "alpha": 0.05,
        "mode": "per-engine",
    },
    "evaluate": {
        "cap_truth": True,
    },
    "importance": {
        "repeats": 10,
        "mode": "window",
        "max_windows": 0,  # 0: every test window
    },
}

SYNTHETIC_WINDOW = 25


def flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key, value, default):
    if isinstance(default, bool):
        if isinstance(value, str):
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if isinstance(default, int):
        try:
            if isinstance(value, float) and value != int(value):
                raise ValueError
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected an integer, got {value!r}") from None
    if isinstance(default, float):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    if isinstance(default, list):
        if isinstance(value, str):
            value = [v for v in value.replace(",", " ").split() if v]
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        try:
            return [int(v) for v in value]
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a list of integers") from None
    return str(value)


def _set(cfg, key, value):
    parts = key.split(".")
    node = cfg
    default = DEFAULTS
    for p in parts[:-1]:
        if p not in node or not isinstance(node[p], dict):
            raise ConfigError(f"unknown config key {key!r}")
        node, default = node[p], default[p]
    leaf = parts[-1]
    if leaf not in default or isinstance(default[leaf], dict):
        raise ConfigError(f"unknown config key {key!r}")
    node[leaf] = _coerce(key, value, default[leaf])


def build(doc: dict | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then a parsed config document, then flat-key overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    for key, value in flatten(doc or {}).items():
        _set(cfg, key, value)
    for key, value in (overrides or {}).items():
        _set(cfg, key, value)
    validate(cfg)
    return cfg


def load(path=None, overrides=None) -> dict:
    doc = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return build(doc, overrides)


def validate(cfg):
    if cfg["data"]["dataset"] not in DATASETS:
        raise ConfigError(f"data.dataset must be one of {DATASETS}")
    if cfg["predict"]["mode"] not in MODES:
        raise ConfigError(f"predict.mode must be one of {MODES}")
    if not 0.0 < cfg["predict"]["alpha"] < 1.0:
        raise ConfigError("predict.alpha must lie in (0, 1)")
    if cfg["importance"]["repeats"] < 1:
        raise ConfigError("importance.repeats must be at least 1")
    if cfg["importance"]["mode"] not in ("window", "timestep"):
        raise ConfigError("importance.mode must be 'window' or 'timestep'")
    preprocess_config(cfg)
    try:
        train_config(cfg)
        if cfg["data"]["dataset"] == "synthetic":
            synthetic_spec(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def window_length(cfg) -> int:
    L = cfg["preprocess"]["window_length"]
    if L > 0:
        return L
    return WINDOW_LENGTHS.get(cfg["data"]["dataset"], SYNTHETIC_WINDOW)


def preprocess_config(cfg) -> PreprocessConfig:
    p = cfg["preprocess"]
    return PreprocessConfig(tuple(p["selected_sensors"]), p["rul_cap"], p["smoothing_s"],
                            window_length(cfg), p["stride"], p["norm_fit"])


def sub_seed(cfg, name: str) -> int:
    """Named child seed of the top-level seed (stable across runs and platforms)."""
    ss = np.random.SeedSequence([int(cfg["seed"]), zlib.crc32(name.encode())])
    return int(ss.generate_state(1)[0])


SEED_NAMES = ("synthetic", "train", "subsample", "gp_restarts", "importance")


def seeds(cfg) -> dict:
    return {name: sub_seed(cfg, name) for name in SEED_NAMES}


def train_config(cfg) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(t["hidden_size"], t["learning_rate"], t["epochs"], t["batch_size"],
                       t["huber_delta"], sub_seed(cfg, "train"), t["optimizer"], t["readout_bias_init"])


def synthetic_spec(cfg) -> SyntheticSpec:
    s = cfg["synthetic"]
    return SyntheticSpec(
        n_engines=s["n_engines"],
        n_sensors=s["n_sensors"],
        life_range=(s["life_min"], s["life_max"]),
        degradation_onset_fraction=s["onset_fraction"],
        noise_scale=s["noise_scale"],
        seed=sub_seed(cfg, "synthetic"),
        n_test_engines=s["n_test_engines"] or None,
        drift_sensors=tuple(s["drift_sensors"]) or None,
        drift_kind=s["drift_kind"],
    )


def dumps(cfg) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True)
