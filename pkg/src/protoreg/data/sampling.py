"""Clip sampling and minority-label oversampling."""

from __future__ import annotations

import logging

import numpy as np

from protoreg.data.types import (
    START_RULE_UNIFORM,
    DatasetSplit,
    SamplingPolicy,
    SourceVideo,
    VideoClip,
)
from protoreg.errors import ValidationError

log = logging.getLogger(__name__)


def sample_clip(video, policy: SamplingPolicy, rng: np.random.Generator = None) -> VideoClip:
    """Cut a fixed-length clip out of a full video.

    Frames are taken at ``start + period * [0..clip_length)`` with cyclic
    wraparound for videos shorter than the sampled span. The start index is
    0 under the deterministic rule, otherwise uniform over the largest range
    that keeps the clip in-bounds (or over the whole video when wraparound is
    unavoidable).
    """
    if isinstance(video, SourceVideo):
        frames, mask, label, vid_id = video.get_frames(), video.get_mask(), video.label, video.id
    else:
        frames, mask, label, vid_id = np.asarray(video), None, 50.0, "anonymous"
    if frames.ndim == 3:
        frames = frames[..., None]
    total = frames.shape[2]
    if total < 1:
        raise ValidationError("video has no frames")

    if policy.start_index_rule == START_RULE_UNIFORM:
        if rng is None:
            raise ValidationError("uniform-random start rule requires an rng")
        high = total - policy.span + 1
        start = int(rng.integers(0, high)) if high >= 1 else int(rng.integers(0, total))
    else:
        start = 0

    idx = (start + policy.period * np.arange(policy.clip_length)) % total
    clip_mask = mask[:, :, idx] if mask is not None else None
    return VideoClip(
        frames=frames[:, :, idx, :],
        label=label,
        id=vid_id,
        mask=clip_mask,
        start_index=start,
    )


def balance_by_oversampling(
    split: DatasetSplit, threshold: float = 50.0, rng: np.random.Generator = None
) -> DatasetSplit:
    """Duplicate minority-label videos (label < threshold) up to parity.

    Originals are always retained; duplicates are drawn with replacement and
    appended, so counts satisfy minority >= majority afterwards. A split with
    no minority videos is returned unchanged with a ``no_minority`` flag.
    """
    minority = [c for c in split.clips if c.label < threshold]
    majority_count = len(split.clips) - len(minority)
    if not minority:
        if majority_count:
            log.warning("split %r has no clips below %.1f; oversampling skipped",
                        split.split_name, threshold)
            return split.with_clips(list(split.clips), no_minority=True)
        return split
    deficit = majority_count - len(minority)
    if deficit <= 0:
        return split
    rng = rng or np.random.default_rng()
    picks = rng.integers(0, len(minority), size=deficit)
    return split.with_clips(list(split.clips) + [minority[i] for i in picks])
