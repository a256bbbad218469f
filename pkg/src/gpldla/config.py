"""Run configuration: strict TOML in, resolved dict out, echo back.

Unknown keys are hard errors (typo protection for sweeps), every known
key has a default, and the resolved config can be re-serialized to TOML
that parses back to an identical resolved config.
"""

import json
import os
from dataclasses import dataclass

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .backbone import ACTIVATIONS, ARCH_KINDS, ArchSpec
from .data import SyntheticTaskConfig, generate_synthetic_pool, load_dataset
from .errors import ConfigError
from .heads import HEADS
from .trainer import TrainConfig

_HEAD_NAMES = tuple(sorted(HEADS))

# Each leaf is (type tag, default[, choices]); nesting mirrors the TOML.
_SCHEMA = {
    "seed": ("int", 0),
    "out_dir": ("str", "gpldla_out"),
    "data": {
        "source": ("choice", "synthetic", ("synthetic", "csv")),
        "synthetic": {
            "input_dim": ("int", 16),
            "latent_classes": ("int", 40),
            "train_classes": ("int", 24),
            "val_classes": ("int", 8),
            "test_classes": ("int", 8),
            "center_scale": ("float", 5.0),
            "noise_scale": ("float", 1.0),
            "samples_per_class": ("int", 40),
            "seed": ("int", 0),
        },
        "csv": {
            "features_path": ("str", ""),
            "split_path": ("str", ""),
            "has_header": ("bool", False),
        },
    },
    "backbone": {
        "kind": ("choice", "mlp", ARCH_KINDS),
        "out_dim": ("int", 32),
        "hidden": ("int", 64),
        "activation": ("choice", "relu", ACTIVATIONS),
        "normalize": ("bool", True),
    },
    "head": {
        "name": ("choice", "gpldla", _HEAD_NAMES),
    },
    "episode": {
        "way": ("int", 5),
        "shots": ("int", 1),
        "queries": ("int", 15),
        "mc_samples": ("int", 10),
    },
    "train": {
        "episodes": ("int", 2000),
        "lr_backbone": ("float", 0.002),
        "lr_prior": ("float", 0.005),
        "decay_every_epochs": ("int", 5),
        "decay_factor": ("float", 0.5),
        "episodes_per_epoch": ("int", 100),
        "val_episodes": ("int", 100),
        "clip": ("bool", False),
    },
    "eval": {
        "episodes": ("int", 600),
        "calibration_fit_episodes": ("int", 300),
        "calibration_eval_episodes": ("int", 300),
        "bins": ("int", 20),
    },
    "compare": {
        "heads": ("str_list", list(_HEAD_NAMES)),
    },
}


def _check_leaf(spec, value, path):
    tag = spec[0]
    if tag == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {path}: expected integer, got {value!r}")
        return value
    if tag == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {path}: expected number, got {value!r}")
        return float(value)
    if tag == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"config key {path}: expected true/false, got {value!r}")
        return value
    if tag == "str":
        if not isinstance(value, str):
            raise ConfigError(f"config key {path}: expected string, got {value!r}")
        return value
    if tag == "choice":
        choices = spec[2]
        if value not in choices:
            raise ConfigError(
                f"config key {path}: {value!r} is not one of {sorted(choices)}")
        return value
    if tag == "str_list":
        if (not isinstance(value, list)
                or any(not isinstance(v, str) for v in value)):
            raise ConfigError(f"config key {path}: expected a list of strings")
        return list(value)
    raise AssertionError(f"bad schema tag {tag}")


def _resolve(schema, raw, prefix):
    if not isinstance(raw, dict):
        raise ConfigError(f"config key {prefix or '<root>'}: expected a table")
    for key in raw:
        if key not in schema:
            path = f"{prefix}.{key}" if prefix else key
            raise ConfigError(f"unknown config key {path!r}")
    out = {}
    for key, spec in schema.items():
        path = f"{prefix}.{key}" if prefix else key
        if isinstance(spec, dict):
            out[key] = _resolve(spec, raw.get(key, {}), path)
        elif key in raw:
            out[key] = _check_leaf(spec, raw[key], path)
        else:
            out[key] = spec[1] if spec[0] != "str_list" else list(spec[1])
    return out


@dataclass
class RunConfig:
    """Fully-resolved run settings plus typed views into them."""

    resolved: dict
    base_dir: str = "."

    @property
    def seed(self):
        return self.resolved["seed"]

    @property
    def out_dir(self):
        return self.resolved["out_dir"]

    @property
    def head_name(self):
        return self.resolved["head"]["name"]

    @property
    def compare_heads(self):
        return self.resolved["compare"]["heads"]

    def synthetic_config(self):
        return SyntheticTaskConfig(**self.resolved["data"]["synthetic"])

    def arch(self, input_dim):
        b = self.resolved["backbone"]
        return ArchSpec(kind=b["kind"], in_dim=input_dim, out_dim=b["out_dim"],
                        hidden=b["hidden"], activation=b["activation"],
                        normalize=b["normalize"])

    def train_config(self):
        ep = self.resolved["episode"]
        tr = self.resolved["train"]
        return TrainConfig(episodes=tr["episodes"], way=ep["way"],
                           shots=ep["shots"], queries=ep["queries"],
                           mc_samples=ep["mc_samples"],
                           lr_backbone=tr["lr_backbone"],
                           lr_prior=tr["lr_prior"],
                           decay_every_epochs=tr["decay_every_epochs"],
                           decay_factor=tr["decay_factor"],
                           episodes_per_epoch=tr["episodes_per_epoch"],
                           val_episodes=tr["val_episodes"], clip=tr["clip"],
                           seed=self.seed)

    def load_dataset(self):
        data = self.resolved["data"]
        if data["source"] == "synthetic":
            return generate_synthetic_pool(self.synthetic_config())
        csv_cfg = data["csv"]
        if not csv_cfg["features_path"] or not csv_cfg["split_path"]:
            raise ConfigError(
                "data.csv.features_path and data.csv.split_path are required "
                "when data.source = 'csv'")
        features = os.path.join(self.base_dir, csv_cfg["features_path"])
        split = os.path.join(self.base_dir, csv_cfg["split_path"])
        for path in (features, split):
            if not os.path.exists(path):
                raise ConfigError(f"dataset file not found: {path}")
        return load_dataset(features, split, csv_cfg["has_header"])


def resolve_config(raw, base_dir=".") -> RunConfig:
    return RunConfig(_resolve(_SCHEMA, raw, ""), base_dir)


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"config {path} is not valid TOML: {err}") from err
    return resolve_config(raw, os.path.dirname(os.path.abspath(path)))


def _fmt_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, list):
        return "[" + ", ".join(json.dumps(v) for v in value) + "]"
    raise AssertionError(f"cannot format {value!r}")


def echo_toml(cfg: RunConfig) -> str:
    """Serialize the resolved config; parsing it back resolves identically."""
    lines = []

    def emit(schema, resolved, prefix):
        scalars = [(k, s) for k, s in schema.items() if not isinstance(s, dict)]
        tables = [(k, s) for k, s in schema.items() if isinstance(s, dict)]
        if scalars and prefix:
            lines.append(f"[{prefix}]")
        for key, _ in scalars:
            lines.append(f"{key} = {_fmt_value(resolved[key])}")
        if scalars:
            lines.append("")
        for key, sub in tables:
            emit(sub, resolved[key], f"{prefix}.{key}" if prefix else key)

    emit(_SCHEMA, cfg.resolved, "")
    return "\n".join(lines).rstrip() + "\n"
