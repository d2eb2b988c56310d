"""Run configuration: merged defaults <- config file <- flags.

The resolved configuration is serialized into every output's metadata; the
feature-relevant subset is hashed so checkpoints and caches can refuse
incompatible inputs.  MELFORGE_SEED overrides the configured seeds.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, replace

from .dsp import FeatureConfig
from .model import ModelConfig


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    n_critic: int = 5
    gp_weight: float = 10.0
    alpha: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.9
    adam_eps: float = 1e-8
    max_iters: int = 10000
    seed: int = 0
    checkpoint_every: int = 1000
    log_every: int = 50
    gan_start_step: int = 0  # GAN terms active from this step on
    disc_channels: int = 64
    disc_variant: str = "base"  # critic stack variant: base | v1 | v2

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass(frozen=True)
class ProtocolConfig:
    n_enroll: int = 3
    n_target: int = 20
    n_synth: int = 20
    seed: int = 0

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "ProtocolConfig":
        return cls(**d)


@dataclass(frozen=True)
class RunConfig:
    dsp: FeatureConfig = field(default_factory=FeatureConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)

    def to_dict(self) -> dict:
        return {
            "dsp": self.dsp.to_dict(),
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "protocol": self.protocol.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(
            dsp=FeatureConfig.from_dict(d.get("dsp", {})) if d.get("dsp") else FeatureConfig(),
            model=ModelConfig.from_dict(d.get("model", {})) if d.get("model") else ModelConfig(),
            train=TrainConfig.from_dict(d.get("train", {})) if d.get("train") else TrainConfig(),
            protocol=ProtocolConfig.from_dict(d.get("protocol", {}))
            if d.get("protocol")
            else ProtocolConfig(),
        )


def feature_hash(cfg: FeatureConfig) -> str:
    """Stable short hash of the feature-relevant configuration."""
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Precedence: overrides (flags) > config file > built-in defaults."""
    data: dict = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    if overrides:
        for section, values in overrides.items():
            data.setdefault(section, {}).update(
                {k: v for k, v in values.items() if v is not None}
            )
    cfg = RunConfig.from_dict(data)
    env_seed = os.environ.get("MELFORGE_SEED")
    if env_seed is not None:
        seed = int(env_seed)
        cfg = replace(
            cfg,
            train=replace(cfg.train, seed=seed),
            protocol=replace(cfg.protocol, seed=seed),
        )
    return cfg
