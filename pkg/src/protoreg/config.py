"""Training configuration: every knob in one dataclass, YAML round-trip."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Optional, Union

import yaml

from protoreg.errors import ConfigError
from protoreg.losses import LossWeights


@dataclass
class TrainConfig:
    # model
    variant: str = "tiny"
    feature_dim: int = 64
    m: int = 40
    tau: float = 0.2
    pretrained_weights_path: Optional[str] = None
    # data pipeline
    img_size: int = 64
    clip_length: int = 64
    sample_period: int = 1
    max_rotate_degrees: float = 15.0
    oversample_threshold: float = 50.0
    # optimization (per-group learning rates)
    epochs: int = 30
    batch_size: int = 16
    lr_backbone: float = 1e-4
    lr_regression: float = 1e-4
    lr_feature_roi: float = 1e-3
    lr_prototypes: float = 3e-3
    grad_clip_norm: float = 5.0
    # loss configuration
    delta_l: float = 5.0
    k: int = 3
    lambda_mse: float = 1.0
    lambda_clst: float = 0.75
    lambda_psd: float = 0.5
    lambda_pas: float = 0.5
    lambda_occur: float = 0.3
    rho: float = 1e-3
    # schedule
    projection_epoch: Union[str, int] = "last"
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.variant not in ("tiny", "full"):
            raise ConfigError(f"unknown variant {self.variant!r}")
        for name in ("lr_backbone", "lr_regression", "lr_feature_roi", "lr_prototypes"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if self.m < 2:
            raise ConfigError("m must be >= 2")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.tau <= 0 or self.delta_l <= 0 or self.k < 1:
            raise ConfigError("tau and delta_l must be > 0, k >= 1")
        if self.projection_epoch not in ("last", "none"):
            raise ConfigError("projection_epoch must be 'last' or 'none'")
        self.loss_weights()  # raises on negative weights
        return self

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            lambda_mse=self.lambda_mse,
            lambda_clst=self.lambda_clst,
            lambda_psd=self.lambda_psd,
            lambda_pas=self.lambda_pas,
            lambda_occur=self.lambda_occur,
            rho=self.rho,
        )

    @classmethod
    def desk_scale(cls, **overrides) -> "TrainConfig":
        """CPU-friendly defaults: tiny backbone, 64x64 inputs, 10 prototypes.

        Loss weights and learning rates are retuned for this scale; ten epochs
        on a few hundred clips need a much stronger pull from the latent-space
        losses than the full-scale defaults provide.
        """
        base = cls(variant="tiny", img_size=64, m=10, epochs=10, feature_dim=64,
                   batch_size=8, lr_backbone=3e-4, lr_prototypes=1e-2,
                   lambda_clst=100.0, lambda_psd=30.0, lambda_pas=10.0,
                   lambda_occur=3.0)
        return replace(base, **overrides).validate()

    @classmethod
    def full_scale(cls, **overrides) -> "TrainConfig":
        """Published hyperparameters: 40 prototypes, 30 epochs, 112x112 inputs."""
        base = cls(variant="full", img_size=112, m=40, epochs=30, feature_dim=512,
                   batch_size=16, tau=0.2, delta_l=5.0, k=3,
                   lr_backbone=1e-4, lr_regression=1e-4,
                   lr_feature_roi=1e-3, lr_prototypes=3e-3)
        return replace(base, **overrides).validate()

    def to_dict(self) -> dict:
        return asdict(self)

    def to_yaml(self, path: str) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**values).validate()

    @classmethod
    def from_yaml(cls, path: str) -> "TrainConfig":
        try:
            with open(path) as fh:
                values = yaml.safe_load(fh) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {path} failed to parse: {exc}")
        if not isinstance(values, dict):
            raise ConfigError(f"config file {path} must contain a mapping")
        return cls.from_dict(values)

    def with_overrides(self, **overrides) -> "TrainConfig":
        overrides = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **overrides).validate()
