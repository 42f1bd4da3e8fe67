import math

import numpy as np
import pytest

from protoreg.data.augment import augment_rotate, rotate_clip
from protoreg.data.sampling import sample_clip
from protoreg.data.synthetic import SynthSpec, generate_synthetic, render_ellipse_mask
from protoreg.data.types import default_policy
from protoreg.errors import ValidationError


def synthetic_clip(seed=5, grid=64, frames=8):
    spec = SynthSpec(grid_size=(grid, grid), num_frames=frames, period_frames=4,
                     area_max=700.0, area_min=350.0, seed=seed, noise_std=0.0)
    video = generate_synthetic(spec, 1).clips[0]
    clip = sample_clip(video, default_policy("test", clip_length=frames))
    return clip, video.meta


def analytic_rotated_mask(meta, grid, frames, angle_degrees):
    """Re-render the ellipse with rotated parameters (the rotation oracle).

    The resampling path rotates clockwise about the array center (n-1)/2 for
    positive angles, which maps to a -angle parameter rotation here.
    """
    rad = math.radians(-angle_degrees)
    c0 = (grid - 1) / 2.0
    cy, cx = meta["center"]
    dy, dx = cy - c0, cx - c0
    new_center = (
        c0 + dy * math.cos(rad) + dx * math.sin(rad),
        c0 - dy * math.sin(rad) + dx * math.cos(rad),
    )
    masks = [
        render_ellipse_mask(grid, grid, new_center, meta["axes"][t], meta["angle"] + rad)
        for t in range(frames)
    ]
    return np.stack(masks, axis=-1)


class TestRotation:
    def test_zero_max_degrees_is_identity(self):
        clip, _ = synthetic_clip()
        out = augment_rotate(clip, 0.0, np.random.default_rng(0))
        assert np.array_equal(out.frames, clip.frames)
        assert np.array_equal(out.mask, clip.mask)

    def test_label_unchanged(self):
        clip, _ = synthetic_clip()
        out = augment_rotate(clip, 15.0, np.random.default_rng(1))
        assert out.label == clip.label

    @pytest.mark.parametrize("angle", [7.0, 15.0, -22.0, 28.0])
    def test_mask_tracks_analytic_ellipse(self, angle):
        clip, meta = synthetic_clip(seed=int(abs(angle)))
        rotated = rotate_clip(clip, angle)
        oracle = analytic_rotated_mask(meta, 64, clip.num_frames, angle)
        inter = np.logical_and(rotated.mask, oracle).sum()
        union = np.logical_or(rotated.mask, oracle).sum()
        assert inter / union > 0.95

    def test_frames_and_mask_share_the_angle(self):
        # the bright region of the rotated frames must coincide with the mask
        clip, _ = synthetic_clip()
        out = augment_rotate(clip, 25.0, np.random.default_rng(3))
        bright = out.frames[..., 0] > 0.4
        inter = np.logical_and(bright, out.mask).sum()
        union = np.logical_or(bright, out.mask).sum()
        assert inter / union > 0.95

    def test_angle_bound_enforced(self):
        clip, _ = synthetic_clip()
        with pytest.raises(ValidationError):
            augment_rotate(clip, 60.0, np.random.default_rng(0))

    def test_out_of_bounds_zero_filled(self):
        clip, _ = synthetic_clip()
        clip.frames[:] = 1.0  # saturate so corners expose the fill value
        out = rotate_clip(clip, 30.0)
        assert out.frames[0, 0, 0, 0] == 0.0
        assert out.frames.min() >= 0.0
