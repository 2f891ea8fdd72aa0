"""Run configuration: the full hyperparameter record, validation, seeds."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["RunConfig", "ConfigError"]


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # architecture
    d: int = 32
    heads: int = 8
    n_layers: int = 6
    ffn_dim: int = 512
    d_prime: int = 128
    spectral_norm: bool = True
    activation: str = "gelu_tanh"
    # optimization (production batch 32768 scaled down for desk CPUs)
    batch_size: int = 256
    initial_lr: float = 5e-5
    cosine_alpha: float = 0.1
    warmup_target_pretrain: float = 10.0
    warmup_target_finetune: float = 2.0
    warmup_steps: int = 100
    decay_steps: int = 10_000
    weight_decay: float = 0.0
    # pretraining
    pretrain_steps: int = 0
    cutmix_swap_prob: float = 0.2
    mixup_alpha: float = 0.8
    contrastive_tau: float = 0.1
    # fine-tuning
    finetune_steps: int = 500
    focal_gamma: float = 2.0
    d_rf: int = 1024
    gp_length_scale: float = 2.0
    gp_ridge: float = 1.0
    linear_probe: bool = False
    # data / misc
    asset_criterion: str = "recency"
    folds: int = 5
    seed: int = 0
    threads: int = 1

    def validate(self) -> None:
        checks = [
            (self.d > 0 and self.d % 2 == 0, "d must be a positive even integer"),
            (self.heads > 0 and self.d % self.heads == 0, "d must be divisible by heads"),
            (self.n_layers >= 0, "n_layers must be >= 0"),
            (self.d_prime >= 1, "d_prime must be >= 1"),
            (0.0 <= self.cutmix_swap_prob <= 1.0, "cutmix_swap_prob must be in [0,1]"),
            (0.0 <= self.mixup_alpha <= 1.0, "mixup_alpha must be in [0,1]"),
            (self.contrastive_tau > 0, "contrastive_tau must be positive"),
            (self.initial_lr >= 0, "initial_lr must be >= 0"),
            (0.0 <= self.cosine_alpha <= 1.0, "cosine_alpha must be in [0,1]"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.folds >= 2, "folds must be >= 2"),
            (self.d_rf >= 1, "d_rf must be >= 1"),
            (self.gp_ridge > 0, "gp_ridge must be positive"),
            (self.focal_gamma >= 0, "focal_gamma must be >= 0"),
            (self.activation in ("gelu_tanh",), "unsupported activation"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "RunConfig":
        known = {f for f in RunConfig.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = RunConfig(**d)
        cfg.validate()
        return cfg

    @staticmethod
    def load(path) -> "RunConfig":
        try:
            return RunConfig.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file is not valid JSON: {e}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def substream(self, name: str) -> np.random.Generator:
        """Named RNG substream derived from the single run seed."""
        digest = int.from_bytes(name.encode(), "big") % (2**31)
        return np.random.default_rng(np.random.SeedSequence([self.seed, digest]))
