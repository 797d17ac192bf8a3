"""Run configuration: defaults < key=value file < command-line flags."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .hierarchy import ModelConfig

OUTPUT_ROOT_ENV = "HIGFLOW_OUTPUT_ROOT"


class ConfigError(ValueError):
    """Invalid configuration; the message always names the offending key."""


@dataclass
class RunConfig:
    # data
    dataset: str = "synthetic"
    has_header: str = "auto"
    n_vars: int = 0
    synthetic_vars: int = 8
    synthetic_length: int = 2000
    synthetic_noise: float = 0.1
    synthetic_seed: int = 0
    t_in: int = 3
    t_out: int = 12
    denormalize: bool = False
    # model
    depth: int = 2
    hidden: int = 16
    heads: int = 4
    tau: float = 0.02
    transition_depth: int = 2
    readout_hidden: int = 64
    embed_domain_shift: bool = True
    lift_domain_shift: bool = True
    naive_encoding: bool = True
    freeze_clusters: bool = False
    # training
    lr: float = 5e-4
    batch_size: int = 32
    epochs: int = 50
    patience: int = 10
    seed: int = 0
    probe_samples: int = 64
    # analysis
    theorem1_trials: int = 500
    theorem2_trials: int = 100
    theorem3_trials: int = 200
    max_nodes: int = 32
    max_depth: int = 4
    # output
    out_dir: str = ""
    figures: bool = True

    def validate(self) -> "RunConfig":
        checks = [
            ("has_header", self.has_header in ("auto", "true", "false"), "one of auto/true/false"),
            ("n_vars", self.n_vars >= 0, ">= 0 (0 = all columns)"),
            ("synthetic_vars", self.synthetic_vars >= 1, ">= 1"),
            ("synthetic_length", self.synthetic_length >= 2, ">= 2"),
            ("synthetic_noise", self.synthetic_noise >= 0, ">= 0"),
            ("t_in", self.t_in >= 1, ">= 1"),
            ("t_out", self.t_out >= 1, ">= 1"),
            ("depth", 1 <= self.depth <= 4, "in [1, 4]"),
            ("hidden", self.hidden >= 1, ">= 1"),
            ("heads", self.heads >= 1, ">= 1"),
            ("tau", 0.0 < self.tau <= 1.0, "in (0, 1]"),
            ("transition_depth", self.transition_depth in (1, 2, 3), "one of 1, 2, 3"),
            ("readout_hidden", self.readout_hidden >= 1, ">= 1"),
            ("lr", self.lr >= 0.0, ">= 0"),
            ("batch_size", self.batch_size >= 1, ">= 1"),
            ("epochs", self.epochs >= 0, ">= 0"),
            ("patience", self.patience >= 1, ">= 1"),
            ("probe_samples", self.probe_samples >= 0, ">= 0"),
            ("theorem1_trials", self.theorem1_trials >= 1, ">= 1"),
            ("theorem2_trials", self.theorem2_trials >= 1, ">= 1"),
            ("theorem3_trials", self.theorem3_trials >= 1, ">= 1"),
            ("max_nodes", self.max_nodes >= 2, ">= 2"),
            ("max_depth", self.max_depth >= 1, ">= 1"),
        ]
        for key, ok, legal in checks:
            if not ok:
                raise ConfigError(f"{key}={getattr(self, key)!r} out of range; legal range {legal}")
        if self.hidden % self.heads:
            raise ConfigError(f"hidden={self.hidden} not divisible by heads={self.heads}")
        return self

    def model_config(self, n_vars: int) -> ModelConfig:
        return ModelConfig(
            n_vars=n_vars, t_in=self.t_in, t_out=self.t_out, hidden=self.hidden, heads=self.heads,
            depth=self.depth, tau=self.tau, transition_depth=self.transition_depth,
            readout_hidden=self.readout_hidden, embed_domain_shift=self.embed_domain_shift,
            lift_domain_shift=self.lift_domain_shift, naive_encoding=self.naive_encoding,
            seed=self.seed)

    def resolved_out_dir(self, command: str) -> Path:
        if self.out_dir:
            return Path(self.out_dir)
        root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
        return root / f"{command}-seed{self.seed}"

    def dumps(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in asdict(self).items())


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def coerce(key: str, raw: str):
    if key not in FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {kind}, got {raw!r}") from None
    return raw


def read_config_file(path) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        values[key] = coerce(key, val)
    return values


def parse_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Resolve a RunConfig; ``overrides`` maps keys to raw strings or typed values."""
    values = read_config_file(path) if path else {}
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        values[key] = coerce(key, val) if isinstance(val, str) else val
    for key in values:
        if key not in FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
    return RunConfig(**values).validate()
