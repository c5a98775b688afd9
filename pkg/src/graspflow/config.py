"""Flat run configuration shared by every subcommand.

A config file is plain ``key = value`` text; ``#`` starts a comment. Values are
coerced to the type of the matching :class:`RunConfig` field.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .ode import IntegratorConfig
from .velocity import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: str = "run"
    # data
    pairs_per_object: int = 15
    # depth autoencoder
    ae_epochs: int = 1000
    ae_lr: float = 1e-3
    ae_batch_size: int = 32
    # velocity net
    epochs: int = 2000
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    split: float = 0.8
    output_activation: str = "identity"
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    draws_per_pair: int = 1
    condition_noise: float = 0.05
    start_jitter: float = 0.01
    # integrator
    method: str = "dopri5"
    rtol: float = 1e-5
    atol: float = 1e-7
    initial_step: float = 0.05
    max_steps: int = 10000
    # evaluation
    eval_trials: int = 200
    trajectories: int = 4

    def __post_init__(self):
        if self.pairs_per_object < 1:
            raise ConfigError("pairs_per_object must be at least 1")
        if self.ae_epochs < 1 or self.eval_trials < 1 or self.trajectories < 1:
            raise ConfigError("ae_epochs, eval_trials and trajectories must be positive")
        try:
            self.train_config()
            self.integrator_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr, beta1=self.beta1,
                           beta2=self.beta2, adam_eps=self.adam_eps, seed=self.seed, split=self.split,
                           output_activation=self.output_activation, bn_momentum=self.bn_momentum,
                           bn_eps=self.bn_eps, draws_per_pair=self.draws_per_pair,
                           condition_noise=self.condition_noise, start_jitter=self.start_jitter)

    def integrator_config(self) -> IntegratorConfig:
        return IntegratorConfig(method=self.method, rtol=self.rtol, atol=self.atol,
                                initial_step=self.initial_step, max_steps=self.max_steps)

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_dict().items())


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _TYPES[key]
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from exc
    return raw


def parse_assignments(items) -> dict:
    """``["key=value", ...]`` into a typed override dict."""
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}")
        key, value = item.split("=", 1)
        key = key.strip()
        out[key] = _coerce(key, value)
    return out


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    items = []
    for line in path.read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            items.append(line)
    return parse_assignments(items)


def build_config(path=None, overrides=(), **explicit) -> RunConfig:
    """Defaults, then the config file, then ``--set`` overrides, then explicit flags."""
    values = {}
    if path is not None:
        values.update(read_config_file(path))
    values.update(parse_assignments(overrides))
    values.update({k: v for k, v in explicit.items() if v is not None})
    return replace(RunConfig(), **values)
