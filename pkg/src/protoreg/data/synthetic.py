"""Synthetic pulsating-ellipse videos with a fractional-area-change label.

Each video shows a filled ellipse whose area oscillates sinusoidally between
``area_max`` and ``area_min``; the regression target is the relative area
change 100 * (area_max - area_min) / area_max, a desk-scale stand-in for a
volumetric contraction percentage. The per-frame ellipse interior doubles as
the region mask.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from protoreg.data.types import (
    LABEL_MAX,
    LABEL_MIN,
    DatasetSplit,
    SourceVideo,
    default_policy,
)
from protoreg.errors import ValidationError

log = logging.getLogger(__name__)

BACKGROUND_LEVEL = 0.08


@dataclass
class SynthSpec:
    grid_size: tuple = (64, 64)
    num_frames: int = 96
    period_frames: int = 32
    area_max: float = 700.0
    area_min: float = 280.0
    noise_std: float = 0.05
    seed: int = 0

    @property
    def label(self) -> float:
        return 100.0 * (self.area_max - self.area_min) / self.area_max

    def validate(self) -> "SynthSpec":
        h, w = self.grid_size
        if h < 8 or w < 8:
            raise ValidationError(f"grid_size {self.grid_size} too small")
        if self.num_frames < 1:
            raise ValidationError("num_frames must be >= 1")
        if self.period_frames < 2:
            raise ValidationError("period_frames must be >= 2")
        if self.area_min >= self.area_max:
            raise ValidationError(
                f"area_min ({self.area_min}) must be < area_max ({self.area_max})"
            )
        if not (LABEL_MIN <= self.label <= LABEL_MAX):
            raise ValidationError(
                f"derived label {self.label:.2f} outside [{LABEL_MIN}, {LABEL_MAX}]"
            )
        # the largest ellipse must fit inside the grid with a 1px margin
        if self.area_max > math.pi * (h / 2 - 1) * (w / 2 - 1):
            raise ValidationError(f"area_max {self.area_max} does not fit a {h}x{w} grid")
        if self.noise_std < 0:
            raise ValidationError("noise_std must be >= 0")
        return self


def render_ellipse_mask(h, w, center, semi_axes, angle_rad=0.0):
    """Rasterize a filled ellipse by testing pixel centers.

    ``center`` is (row, col), ``semi_axes`` is (a, b) with a along the
    (possibly rotated) column axis. Rotation is counterclockwise in the
    image plane, about ``center``.
    """
    cy, cx = center
    a, b = semi_axes
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    cos_t, sin_t = math.cos(angle_rad), math.sin(angle_rad)
    # coordinates in the ellipse frame (inverse rotation)
    u = dx * cos_t + dy * sin_t
    v = -dx * sin_t + dy * cos_t
    return ((u / a) ** 2 + (v / b) ** 2 <= 1.0).astype(np.uint8)


def _video_params(spec: SynthSpec, rng: np.random.Generator) -> dict:
    h, w = spec.grid_size
    aspect = rng.uniform(0.55, 0.95)  # b/a, so the shape is a genuine ellipse
    a_big = math.sqrt(spec.area_max / (math.pi * aspect))
    margin = a_big + 1.0
    if 2 * margin >= min(h, w):
        raise ValidationError(f"area_max {spec.area_max} does not fit a {h}x{w} grid")
    return {
        "aspect": aspect,
        "angle": rng.uniform(0.0, math.pi),
        "phase": rng.uniform(0.0, 2.0 * math.pi),
        "center": (rng.uniform(margin, h - margin), rng.uniform(margin, w - margin)),
        "foreground": rng.uniform(0.75, 0.95),
    }


def _render_video(spec: SynthSpec, params: dict, rng: np.random.Generator):
    h, w = spec.grid_size
    frames = np.empty((h, w, spec.num_frames), dtype=np.float32)
    masks = np.empty((h, w, spec.num_frames), dtype=np.uint8)
    areas, axes = [], []
    half_swing = 0.5 * (spec.area_max - spec.area_min)
    for t in range(spec.num_frames):
        area = spec.area_min + half_swing * (
            1.0 + math.cos(2.0 * math.pi * t / spec.period_frames + params["phase"])
        )
        a = math.sqrt(area / (math.pi * params["aspect"]))
        b = params["aspect"] * a
        mask = render_ellipse_mask(h, w, params["center"], (a, b), params["angle"])
        frame = BACKGROUND_LEVEL + (params["foreground"] - BACKGROUND_LEVEL) * mask
        masks[:, :, t] = mask
        frames[:, :, t] = frame
        areas.append(area)
        axes.append((a, b))
    if spec.noise_std > 0:
        frames += rng.normal(0.0, spec.noise_std, size=frames.shape).astype(np.float32)
    np.clip(frames, 0.0, 1.0, out=frames)
    meta = dict(params, areas=areas, axes=axes, label=spec.label)
    return frames, masks, meta


def generate_synthetic(spec: SynthSpec, n_videos: int, split_name: str = "train",
                       id_prefix: str = "synth") -> DatasetSplit:
    """Render ``n_videos`` pulsating-ellipse videos sharing one spec.

    All videos carry the spec's derived label; nuisance parameters (center,
    aspect, orientation, phase, texture noise) vary per video. Deterministic
    given ``spec.seed``.
    """
    spec.validate()
    if n_videos < 1:
        raise ValidationError("n_videos must be >= 1")
    rng = np.random.default_rng(spec.seed)
    videos = []
    for v in range(n_videos):
        params = _video_params(spec, rng)
        frames, masks, meta = _render_video(spec, params, rng)
        videos.append(
            SourceVideo(
                id=f"{id_prefix}-{spec.seed:04d}-{v:04d}",
                label=spec.label,
                frames=frames,
                mask=masks,
                meta=meta,
            )
        )
    return DatasetSplit(videos, split_name, default_policy(split_name))


def generate_synthetic_dataset(
    n_per_split: dict,
    base_spec: SynthSpec = None,
    label_range: tuple = (12.0, 88.0),
    seed: int = 0,
) -> dict:
    """Build train/val/test splits whose labels are drawn uniformly in ``label_range``.

    Each video gets its own spec: ``area_min`` is solved from the drawn label
    while ``area_max`` stays at the base spec's value.
    """
    base = base_spec or SynthSpec()
    lo, hi = label_range
    if not (LABEL_MIN <= lo < hi <= LABEL_MAX):
        raise ValidationError(f"label_range {label_range} must be within [{LABEL_MIN}, {LABEL_MAX}]")
    splits = {}
    for s, split_name in enumerate(("train", "val", "test")):
        n = n_per_split.get(split_name, 0)
        if n < 1:
            continue
        rng = np.random.default_rng((seed, s))
        videos = []
        for v in range(n):
            label = rng.uniform(lo, hi)
            spec = replace(
                base,
                area_min=base.area_max * (1.0 - label / 100.0),
                seed=int(rng.integers(0, 2**31 - 1)),
            )
            one = generate_synthetic(spec, 1, "train", id_prefix=f"{split_name}")
            video = one.clips[0]
            video.id = f"{split_name}-{seed:04d}-{v:04d}"
            videos.append(video)
        splits[split_name] = DatasetSplit(
            videos, split_name, default_policy(split_name)
        )
    return splits


def export_dataset(splits: dict, root: str) -> dict:
    """Write each split as compressed per-clip arrays plus a manifest table.

    Layout: ``<root>/<split>/<id>.npz`` (frames as uint8, mask, label) and
    ``<root>/<split>/manifest.csv`` with columns id,label,path.
    """
    manifest_paths = {}
    for split_name, split in splits.items():
        split_dir = os.path.join(root, split_name)
        os.makedirs(split_dir, exist_ok=True)
        rows = []
        for video in split.clips:
            path = os.path.join(split_dir, f"{video.id}.npz")
            frames8 = np.round(video.get_frames() * 255.0).astype(np.uint8)
            mask = video.get_mask()
            arrays = {"frames": frames8, "label": np.float64(video.label)}
            if mask is not None:
                arrays["mask"] = mask.astype(np.uint8)
            np.savez_compressed(path, **arrays)
            rows.append({"id": video.id, "label": video.label, "path": os.path.relpath(path, root)})
        manifest = os.path.join(split_dir, "manifest.csv")
        pd.DataFrame(rows, columns=["id", "label", "path"]).to_csv(manifest, index=False)
        manifest_paths[split_name] = manifest
    return manifest_paths


def _npz_loader(path):
    with np.load(path) as data:
        frames = data["frames"].astype(np.float32) / 255.0
        mask = data["mask"] if "mask" in data.files else None
    return frames, mask


def load_dataset(root: str, clip_length: int = 64, period: int = 1) -> dict:
    """Load an exported dataset back into lazily-read splits."""
    splits = {}
    for split_name in ("train", "val", "test"):
        manifest = os.path.join(root, split_name, "manifest.csv")
        if not os.path.exists(manifest):
            continue
        table = pd.read_csv(manifest)
        videos = [
            SourceVideo(
                id=str(row.id),
                label=float(row.label),
                path=os.path.join(root, str(row.path)),
                loader=_npz_loader,
            )
            for row in table.itertuples()
        ]
        splits[split_name] = DatasetSplit(
            videos, split_name, default_policy(split_name, clip_length, period)
        )
    if not splits:
        raise ValidationError(f"no split manifests found under {root!r}")
    return splits
