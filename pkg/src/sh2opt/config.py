"""Run configuration files (YAML).

Recognized keys::

    problem:          scalar-gain | scalar-pole | random-affine | wave | observer
    problem_options:  keyword options of the problem builder (mapping)
    mu0:              start point (list); default is the problem's own
    distribution:     sampling distribution mapping, e.g. {kind: log-uniform, support: [1e-2, 1e4]}
    M:                frequency samples per iteration
    policy:           step-size policy mapping, e.g. {kind: halving, alpha0: 1e-2, period: 200}
    N:                number of descent steps
    trials:           independent runs
    seed:             base seed; trial t, iteration k use the stream (seed, t, k)
    checkpoint_every: oracle cost cadence in iterations (0 = start and end only)
    divergence_bound: stop a run once a checkpoint cost exceeds this value
    project:          clip iterates to the parameter box (default true)
    exact_gradient:   use the oracle gradient instead of the estimator (default false)
    output:           output directory

Unknown keys are errors.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import yaml


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    problem: str
    distribution: dict
    policy: dict
    M: int
    N: int
    problem_options: dict = field(default_factory=dict)
    mu0: list | None = None
    trials: int = 1
    seed: int = 0
    checkpoint_every: int = 0
    divergence_bound: float | None = None
    project: bool = True
    exact_gradient: bool = False
    output: str = "runs"

    def __post_init__(self):
        if self.M < 1:
            raise ConfigError("M must be >= 1")
        if self.N < 0:
            raise ConfigError("N must be >= 0")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form; with the seed it fixes every output."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def parse_config(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    try:
        cfg = RunConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    for key in ("distribution", "policy", "problem_options"):
        if not isinstance(getattr(cfg, key), dict):
            raise ConfigError(f"{key} must be a mapping")
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    return parse_config(data)


def dump_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)
