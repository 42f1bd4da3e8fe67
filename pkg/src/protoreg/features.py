"""Feature extraction: 3D backbone, feature/occurrence heads, weighted pooling.

Tensors follow the torch video layout (B, C, T, H, W). The extractor yields a
feature volume with D channels, one nonnegative occurrence map per prototype,
and per-prototype pooled feature vectors (occurrence-weighted averages of the
volume cells).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from protoreg.errors import ConfigError

POOL_EPS = 1e-8


@dataclass
class BackboneConfig:
    variant: str = "tiny"  # "tiny" (desk scale) or "full" (R(2+1)D-18 trunk)
    feature_dim: int = 64
    num_prototypes: int = 10
    in_channels: int = 3
    pretrained_weights_path: Optional[str] = None

    def validate(self) -> "BackboneConfig":
        if self.variant not in ("tiny", "full"):
            raise ConfigError(f"unknown backbone variant {self.variant!r}")
        if self.feature_dim < 1 or self.num_prototypes < 2:
            raise ConfigError("feature_dim must be >= 1 and num_prototypes >= 2")
        return self


class TinyBackbone(nn.Module):
    """Three conv blocks, each halving T, H and W; built for CPU-scale runs.

    A 64x64x64 clip maps to an 8x8x8 grid with 64 channels.
    """

    out_channels = 64
    stride = 8  # cumulative, every dimension

    def __init__(self, in_channels: int = 3):
        super().__init__()
        chans = (in_channels, 16, 32, self.out_channels)
        blocks = []
        for cin, cout in zip(chans[:-1], chans[1:]):
            blocks += [
                nn.Conv3d(cin, cout, kernel_size=3, stride=2, padding=1),
                # GroupNorm keeps train and eval behaviour identical, which small
                # CPU batches need; BatchNorm running stats drift too much here
                nn.GroupNorm(min(8, cout), cout),
                nn.ReLU(inplace=True),
            ]
        self.blocks = nn.Sequential(*blocks)

    def forward(self, x):
        return self.blocks(x)


class R2Plus1DBackbone(nn.Module):
    """Trunk of a factorized (2+1)D ResNet-18; temporal stride 8, spatial 16."""

    out_channels = 512
    stride = 8  # temporal; spatial stride is 16

    def __init__(self, in_channels: int = 3, pretrained_weights_path: Optional[str] = None):
        super().__init__()
        if in_channels != 3:
            raise ConfigError("full variant expects 3-channel input")
        from torchvision.models.video import r2plus1d_18

        net = r2plus1d_18(weights=None)
        self.trunk = nn.Sequential(net.stem, net.layer1, net.layer2, net.layer3, net.layer4)
        if pretrained_weights_path:
            self._load_pretrained(pretrained_weights_path)

    def _load_pretrained(self, path: str):
        state = torch.load(path, map_location="cpu", weights_only=True)
        own = self.trunk.state_dict()
        mapped = {}
        for name, tensor in state.items():
            if name in own:
                if own[name].shape != tensor.shape:
                    raise ConfigError(
                        f"pretrained tensor {name!r} has shape {tuple(tensor.shape)}, "
                        f"expected {tuple(own[name].shape)}"
                    )
                mapped[name] = tensor
        missing = set(own) - set(mapped)
        if missing:
            raise ConfigError(f"pretrained weights missing tensors: {sorted(missing)[:5]} ...")
        self.trunk.load_state_dict(mapped)

    def forward(self, x):
        return self.trunk(x)


class FeatureModule(nn.Module):
    """Two pointwise (1x1x1) conv layers mapping backbone channels to D."""

    def __init__(self, in_channels: int, feature_dim: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv3d(in_channels, feature_dim, kernel_size=1),
            nn.ReLU(inplace=True),
            nn.Conv3d(feature_dim, feature_dim, kernel_size=1),
        )

    def forward(self, volume):
        return self.net(volume)


class OccurrenceModule(nn.Module):
    """Two pointwise conv layers producing one map per prototype.

    The absolute value on the output guarantees nonnegative maps.
    """

    def __init__(self, in_channels: int, num_prototypes: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv3d(in_channels, in_channels, kernel_size=1),
            nn.ReLU(inplace=True),
            nn.Conv3d(in_channels, num_prototypes, kernel_size=1),
        )

    def forward(self, volume):
        return self.net(volume).abs()


def pool_by_occurrence(volume: torch.Tensor, maps: torch.Tensor,
                       eps: float = POOL_EPS) -> torch.Tensor:
    """Occurrence-weighted average of volume cells, one D-vector per prototype.

    row_k = sum_cells(M_k * F) / (sum_cells(M_k) + eps). The eps keeps an
    all-zero map finite (its row degenerates to zeros).
    """
    if volume.shape[0] != maps.shape[0] or volume.shape[2:] != maps.shape[2:]:
        raise ConfigError(
            f"volume {tuple(volume.shape)} and maps {tuple(maps.shape)} disagree on grid"
        )
    weighted = torch.einsum("bmthw,bdthw->bmd", maps, volume)
    totals = maps.sum(dim=(2, 3, 4)).unsqueeze(-1)
    return weighted / (totals + eps)


def upsample_map_to_input(occ_map: torch.Tensor, target_dims: tuple) -> torch.Tensor:
    """Trilinearly upsample one occurrence map to (T, H, W), min-max to [0, 1].

    A constant map normalizes to all zeros by convention.
    """
    if occ_map.dim() != 3:
        raise ConfigError(f"expected a T' x H' x W' map, got shape {tuple(occ_map.shape)}")
    if any(t < s for t, s in zip(target_dims, occ_map.shape)):
        raise ConfigError(f"target dims {target_dims} smaller than map {tuple(occ_map.shape)}")
    up = F.interpolate(
        occ_map[None, None], size=tuple(target_dims), mode="trilinear", align_corners=False
    )[0, 0]
    lo, hi = up.min(), up.max()
    if (hi - lo) <= 0:
        return torch.zeros_like(up)
    return (up - lo) / (hi - lo)


class FeatureExtractor(nn.Module):
    """Backbone -> feature volume -> occurrence maps -> pooled prototype features."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        config.validate()
        self.config = config
        if config.variant == "tiny":
            self.backbone = TinyBackbone(config.in_channels)
        else:
            self.backbone = R2Plus1DBackbone(config.in_channels, config.pretrained_weights_path)
        self.feature_module = FeatureModule(self.backbone.out_channels, config.feature_dim)
        self.occurrence_module = OccurrenceModule(config.feature_dim, config.num_prototypes)

    def _check_input(self, x: torch.Tensor):
        if x.dim() != 5 or x.shape[1] != self.config.in_channels:
            raise ConfigError(
                f"expected input (B, {self.config.in_channels}, T, H, W), got {tuple(x.shape)}"
            )
        stride = self.backbone.stride
        if any(d < stride for d in x.shape[2:]):
            raise ConfigError(
                f"input dims {tuple(x.shape[2:])} must each be >= backbone stride {stride}"
            )

    def extract_features(self, x: torch.Tensor) -> torch.Tensor:
        self._check_input(x)
        return self.feature_module(self.backbone(x))

    def compute_occurrence_maps(self, volume: torch.Tensor) -> torch.Tensor:
        return self.occurrence_module(volume)

    def forward(self, x: torch.Tensor) -> dict:
        volume = self.extract_features(x)
        maps = self.compute_occurrence_maps(volume)
        pooled = pool_by_occurrence(volume, maps)
        return {"volume": volume, "maps": maps, "pooled": pooled}


def clips_to_tensor(clips, in_channels: int = 3):
    """Stack VideoClips into model input (B, C, T, H, W) plus labels and masks.

    Grayscale frames are replicated across channels. The mask tensor is None
    unless every clip in the batch carries one.
    """
    frames = []
    masks = []
    for clip in clips:
        arr = torch.from_numpy(np.ascontiguousarray(clip.frames)).float()
        arr = arr.permute(3, 2, 0, 1)  # HWTC -> CTHW
        if arr.shape[0] == 1 and in_channels == 3:
            arr = arr.expand(3, -1, -1, -1)
        frames.append(arr)
        if clip.mask is not None:
            masks.append(torch.from_numpy(np.ascontiguousarray(clip.mask)).float().permute(2, 0, 1))
    x = torch.stack(frames)
    labels = torch.tensor([c.label for c in clips], dtype=torch.float32)
    mask_batch = torch.stack(masks) if len(masks) == len(clips) else None
    return x, labels, mask_batch


def downsample_masks(masks: torch.Tensor, grid_dims: tuple) -> torch.Tensor:
    """Reduce (B, T, H, W) masks to the feature grid; any inside pixel counts."""
    return F.adaptive_max_pool3d(masks.unsqueeze(1), tuple(grid_dims)).squeeze(1)
