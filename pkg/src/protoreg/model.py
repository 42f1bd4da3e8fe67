"""The assembled network: feature extractor plus prototype bank and head."""

from __future__ import annotations

import torch
import torch.nn as nn

from protoreg.config import TrainConfig
from protoreg.features import BackboneConfig, FeatureExtractor, pool_by_occurrence
from protoreg.prototypes import PrototypeBank, cosine_similarity, regression_head


class PrototypeVideoRegressor(nn.Module):
    """Video in, per-prototype similarities and a label-weighted prediction out."""

    def __init__(self, extractor: FeatureExtractor, bank: PrototypeBank, tau: float):
        super().__init__()
        self.extractor = extractor
        self.bank = bank
        self.tau = tau

    @classmethod
    def from_config(cls, config: TrainConfig,
                    generator: torch.Generator = None) -> "PrototypeVideoRegressor":
        backbone_cfg = BackboneConfig(
            variant=config.variant,
            feature_dim=config.feature_dim,
            num_prototypes=config.m,
            pretrained_weights_path=config.pretrained_weights_path,
        )
        extractor = FeatureExtractor(backbone_cfg)
        bank = PrototypeBank.init_random(config.m, config.feature_dim, generator)
        return cls(extractor, bank, config.tau)

    def forward(self, x: torch.Tensor) -> dict:
        out = self.extractor(x)
        sims = cosine_similarity(out["pooled"], self.bank.vectors)  # (B, m)
        beta, prediction = regression_head(sims, self.bank, self.tau)
        out.update({"similarities": sims, "beta": beta, "prediction": prediction})
        return out

    def parameter_groups(self) -> dict:
        """Disjoint parameter groups for per-group learning rates."""
        return {
            "backbone": list(self.extractor.backbone.parameters()),
            "feature_roi": list(self.extractor.feature_module.parameters())
            + list(self.extractor.occurrence_module.parameters()),
            "regression": [self.bank.importance],
            "prototypes": [self.bank.vectors],
        }


def init_weights(module: nn.Module, generator: torch.Generator = None) -> None:
    """Seeded re-initialization of conv/norm layers for reproducible runs."""
    for layer in module.modules():
        if isinstance(layer, nn.Conv3d):
            nn.init.kaiming_normal_(layer.weight, generator=generator)
            if layer.bias is not None:
                nn.init.zeros_(layer.bias)
        elif isinstance(layer, (nn.BatchNorm3d, nn.GroupNorm)):
            nn.init.ones_(layer.weight)
            nn.init.zeros_(layer.bias)
