"""Core data containers: source videos, model-input clips, and dataset splits."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from protoreg.errors import ValidationError

LABEL_MIN = 10.0
LABEL_MAX = 90.0

START_RULE_UNIFORM = "uniform-random"
START_RULE_ZERO = "deterministic-zero"

# val/test draw clips deterministically so repeated evaluation is reproducible
_DEFAULT_RULES = {"train": START_RULE_UNIFORM, "val": START_RULE_ZERO, "test": START_RULE_ZERO}


def _check_label(label: float) -> float:
    label = float(label)
    if not (LABEL_MIN <= label <= LABEL_MAX):
        raise ValidationError(f"label {label} outside [{LABEL_MIN}, {LABEL_MAX}]")
    return label


def _check_mask(mask: np.ndarray, spatial_shape: tuple) -> np.ndarray:
    if mask.shape != tuple(spatial_shape):
        raise ValidationError(
            f"mask shape {mask.shape} does not match frame shape {tuple(spatial_shape)}"
        )
    if mask.size and not np.isin(np.unique(mask), (0, 1)).all():
        raise ValidationError("mask values must be binary (0/1)")
    return mask


@dataclass
class VideoClip:
    """A fixed-length model-input clip.

    ``frames`` is H x W x T x C with intensities in [0, 1]; ``mask`` (optional)
    marks the target region (1 = inside) and shares the H x W x T shape.
    ``start_index`` records which source frame the clip began at, for
    provenance in projection records.
    """

    frames: np.ndarray
    label: float
    id: str
    mask: Optional[np.ndarray] = None
    start_index: int = 0

    def __post_init__(self):
        if self.frames.ndim != 4:
            raise ValidationError(f"frames must be H x W x T x C, got shape {self.frames.shape}")
        self.label = _check_label(self.label)
        if self.mask is not None:
            self.mask = _check_mask(self.mask, self.frames.shape[:3])

    @property
    def num_frames(self) -> int:
        return self.frames.shape[2]


@dataclass
class SourceVideo:
    """A full-length grayscale video (H x W x T in [0, 1]) plus its scalar label.

    Frames may be held in memory or loaded lazily through ``loader(path)``,
    which must return ``(frames, mask_or_none)``. ``meta`` carries generator
    parameters for synthetic videos (used by alignment oracles in tests).
    """

    id: str
    label: float
    frames: Optional[np.ndarray] = None
    mask: Optional[np.ndarray] = None
    path: Optional[str] = None
    loader: Optional[Callable] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.label = _check_label(self.label)
        if self.frames is None and self.loader is None:
            raise ValidationError(f"video {self.id!r} has neither frames nor a loader")

    def _materialize(self):
        if self.frames is None:
            self.frames, self.mask = self.loader(self.path)

    def get_frames(self) -> np.ndarray:
        self._materialize()
        return self.frames

    def get_mask(self) -> Optional[np.ndarray]:
        self._materialize()
        return self.mask

    @property
    def num_frames(self) -> int:
        return self.get_frames().shape[2]


@dataclass
class SamplingPolicy:
    clip_length: int = 64
    period: int = 1
    start_index_rule: str = START_RULE_ZERO

    def __post_init__(self):
        if self.clip_length < 1 or self.period < 1:
            raise ValidationError("clip_length and period must be >= 1")
        if self.start_index_rule not in (START_RULE_UNIFORM, START_RULE_ZERO):
            raise ValidationError(f"unknown start_index_rule {self.start_index_rule!r}")

    @property
    def span(self) -> int:
        return self.clip_length * self.period


def default_policy(split_name: str, clip_length: int = 64, period: int = 1) -> SamplingPolicy:
    return SamplingPolicy(clip_length, period, _DEFAULT_RULES[split_name])


@dataclass
class DatasetSplit:
    """An ordered collection of source videos with a shared sampling policy."""

    clips: list
    split_name: str
    sampling_policy: SamplingPolicy
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.split_name not in ("train", "val", "test"):
            raise ValidationError(f"split_name must be train/val/test, got {self.split_name!r}")
        expected = _DEFAULT_RULES[self.split_name]
        if self.sampling_policy.start_index_rule != expected:
            raise ValidationError(
                f"{self.split_name} split requires start rule {expected!r}, "
                f"got {self.sampling_policy.start_index_rule!r}"
            )

    def __len__(self) -> int:
        return len(self.clips)

    def labels(self) -> np.ndarray:
        return np.array([c.label for c in self.clips], dtype=np.float64)

    def with_clips(self, clips: list, **flags) -> "DatasetSplit":
        return replace(self, clips=clips, flags={**self.flags, **flags})


def check_splits_disjoint(splits: dict) -> None:
    """Splits must not share video ids."""
    seen = {}
    for name, split in splits.items():
        for clip in split.clips:
            if clip.id in seen and seen[clip.id] != name:
                raise ValidationError(
                    f"video id {clip.id!r} appears in both {seen[clip.id]!r} and {name!r}"
                )
            seen[clip.id] = name
