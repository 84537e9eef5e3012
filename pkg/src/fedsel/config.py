"""Experiment configuration: defaults, YAML loading, flag overrides and validation."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from fedsel.selection import POLICY_KINDS, SCHEDULE_SHAPES


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    # federation
    num_clients: int = 10
    num_rounds: int = 20
    alpha: float = 0.5
    # local training
    local_epochs: int = 20
    batch_size: int = 64
    lr: float = 0.001
    hidden_dim: int = 0
    # selection
    policy: str = "fedabc_threshold"
    schedule: str = "linear"
    schedule_coef: float | None = None
    tau_cap: float = 1.0
    lam: float = 0.1
    eta_power: float = 1.0
    cho_counts: list[int] | None = None
    global_init: str = "fresh"
    # data
    data_csv: str | None = None
    num_classes: int = 10
    input_dim: int = 16
    samples_per_class: int = 300
    class_separation: float = 5.0
    n_unlabeled: int = 250
    n_test: int = 500
    # harness
    master_seed: int = 0
    repeats: int = 3
    workers: int = 1

    def validate(self) -> "ExperimentConfig":
        def need(cond: bool, key: str, msg: str) -> None:
            if not cond:
                raise ConfigError(f"{key}: {msg} (got {getattr(self, key)!r})")

        for key in ("num_clients", "num_rounds", "local_epochs", "batch_size",
                    "repeats", "workers", "samples_per_class", "input_dim"):
            need(isinstance(getattr(self, key), int) and getattr(self, key) >= 1, key,
                 "must be an integer >= 1")
        need(isinstance(self.num_classes, int) and self.num_classes >= 2, "num_classes",
             "must be an integer >= 2")
        need(isinstance(self.hidden_dim, int) and self.hidden_dim >= 0, "hidden_dim",
             "must be an integer >= 0")
        for key in ("n_unlabeled", "n_test"):
            need(isinstance(getattr(self, key), int) and getattr(self, key) >= 0, key,
                 "must be an integer >= 0")
        need(self.n_unlabeled >= 1, "n_unlabeled", "probe set must be non-empty")
        need(self.n_test >= 1, "n_test", "test set must be non-empty")
        need(isinstance(self.master_seed, int), "master_seed", "must be an integer")
        need(_is_real(self.alpha) and self.alpha > 0, "alpha", "must be > 0")
        need(_is_real(self.lr) and self.lr > 0, "lr", "must be > 0")
        need(_is_real(self.lam) and self.lam > 0, "lam", "must be > 0")
        need(_is_real(self.eta_power) and self.eta_power > 0, "eta_power", "must be > 0")
        need(_is_real(self.tau_cap) and 0 < self.tau_cap <= 1, "tau_cap", "must be in (0, 1]")
        need(_is_real(self.class_separation) and self.class_separation >= 0,
             "class_separation", "must be >= 0")
        need(self.schedule_coef is None or (_is_real(self.schedule_coef) and self.schedule_coef >= 0),
             "schedule_coef", "must be >= 0 or null")
        need(self.policy in POLICY_KINDS, "policy", f"must be one of {', '.join(POLICY_KINDS)}")
        need(self.schedule in SCHEDULE_SHAPES, "schedule",
             f"must be one of {', '.join(SCHEDULE_SHAPES)}")
        need(self.global_init in ("fresh", "client_mean"), "global_init",
             "must be 'fresh' or 'client_mean'")
        if self.cho_counts is not None:
            counts = self.cho_counts
            need(isinstance(counts, list) and len(counts) == self.num_rounds, "cho_counts",
                 "must list one client count per round")
            need(all(isinstance(n, int) and 1 <= n <= self.num_clients for n in counts),
                 "cho_counts", f"entries must be integers in [1, {self.num_clients}]")
        return self

    def replace(self, **changes: Any) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes).validate()

    def data_key(self) -> tuple:
        """Fields that determine the data and partitions of every repeat."""
        return (self.data_csv, self.num_classes, self.input_dim, self.samples_per_class,
                self.class_separation, self.n_unlabeled, self.n_test, self.num_clients,
                self.alpha, self.master_seed, self.repeats)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def _is_real(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


CONFIG_KEYS = tuple(f.name for f in dataclasses.fields(ExperimentConfig))

# short names accepted in config files and flags
ALIASES = {
    "K": "num_clients",
    "T": "num_rounds",
    "epochs": "local_epochs",
    "seed": "master_seed",
    "lambda": "lam",
}

_FLOAT_KEYS = {f.name for f in dataclasses.fields(ExperimentConfig)
               if "float" in str(f.type)}


def _coerce(key: str, value: Any) -> Any:
    # YAML reads "1e-3" as a string and "1" as an int; normalize real-valued keys
    if key in _FLOAT_KEYS and value is not None:
        if isinstance(value, bool):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    return value


def from_mapping(values: Mapping[str, Any], base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = dataclasses.replace(base) if base is not None else ExperimentConfig()
    for raw_key, value in values.items():
        key = ALIASES.get(str(raw_key), str(raw_key))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {raw_key!r}")
        setattr(cfg, key, _coerce(key, value))
    return cfg.validate()


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    """Defaults, then the YAML file at ``path``, then ``overrides`` (flags win)."""
    values: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            loaded = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from None
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config {path} must be a key-value mapping")
        values.update(loaded)
    cfg = from_mapping(values)
    if overrides:
        cfg = from_mapping({k: v for k, v in overrides.items() if v is not None}, base=cfg)
    return cfg
