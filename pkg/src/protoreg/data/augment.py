"""Training-time augmentation: shared random rotation of frames and mask."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from protoreg.data.types import VideoClip
from protoreg.errors import ValidationError

MAX_ROTATION_BOUND = 45.0


def augment_rotate(clip: VideoClip, max_degrees: float, rng: np.random.Generator) -> VideoClip:
    """Rotate every frame (and the mask) by one shared random angle.

    The angle is uniform in [-max_degrees, +max_degrees]; out-of-bounds pixels
    are zero-filled, the label is untouched. Frames use bilinear resampling,
    the mask nearest-neighbour so it stays binary.
    """
    if not (0.0 <= max_degrees <= MAX_ROTATION_BOUND):
        raise ValidationError(f"max_degrees must be in [0, {MAX_ROTATION_BOUND}], got {max_degrees}")
    if max_degrees == 0.0:
        return clip
    angle = float(rng.uniform(-max_degrees, max_degrees))
    return rotate_clip(clip, angle)


def rotate_clip(clip: VideoClip, angle_degrees: float) -> VideoClip:
    """Deterministic counterpart of augment_rotate with an explicit angle."""
    frames = ndimage.rotate(
        clip.frames, angle_degrees, axes=(1, 0), reshape=False,
        order=1, mode="constant", cval=0.0,
    )
    np.clip(frames, 0.0, 1.0, out=frames)
    mask = None
    if clip.mask is not None:
        mask = ndimage.rotate(
            clip.mask, angle_degrees, axes=(1, 0), reshape=False,
            order=0, mode="constant", cval=0,
        )
    return VideoClip(
        frames=frames.astype(clip.frames.dtype, copy=False),
        label=clip.label,
        id=clip.id,
        mask=mask,
        start_index=clip.start_index,
    )
