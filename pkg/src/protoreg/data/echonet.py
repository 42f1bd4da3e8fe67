"""Ingestion of an EchoNet-Dynamic-style directory layout.

Expected layout::

    <root>/FileList.csv          columns FileName, EF, Split (TRAIN/VAL/TEST)
    <root>/Videos/<name>.avi     grayscale echo videos
    <root>/VolumeTracings.csv    optional; FileName, X1, Y1, X2, Y2, Frame

Tracing rows give paired left/right boundary points per traced frame; the
rasterized polygons are unioned across traced frames into a single 2D region
mask that is broadcast over time when video frames are loaded.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from protoreg.data.types import (
    LABEL_MAX,
    LABEL_MIN,
    DatasetSplit,
    SourceVideo,
    check_splits_disjoint,
    default_policy,
)
from protoreg.errors import IngestError

log = logging.getLogger(__name__)

FILELIST_NAME = "FileList.csv"
TRACINGS_NAME = "VolumeTracings.csv"
VIDEO_DIR = "Videos"

_SPLIT_NAMES = {"TRAIN": "train", "VAL": "val", "TEST": "test"}


@dataclass
class IngestResult:
    """Splits plus the skip log (filename, reason) for rows that were dropped."""

    splits: dict
    skipped: list = field(default_factory=list)

    def __getitem__(self, split_name: str) -> DatasetSplit:
        return self.splits[split_name]

    def __contains__(self, split_name: str) -> bool:
        return split_name in self.splits


def load_video(path: str) -> np.ndarray:
    """Decode an AVI into an H x W x T grayscale array in [0, 1]."""
    import cv2

    capture = cv2.VideoCapture(path)
    try:
        frames = []
        while True:
            ok, frame = capture.read()
            if not ok:
                break
            frames.append(cv2.cvtColor(frame, cv2.COLOR_BGR2GRAY))
    finally:
        capture.release()
    if not frames:
        raise IngestError(f"no decodable frames in {path!r}")
    return (np.stack(frames, axis=-1).astype(np.float32)) / 255.0


def rasterize_tracing(points: np.ndarray, h: int, w: int) -> np.ndarray:
    """Fill the polygon traced by paired boundary segments (X1,Y1)-(X2,Y2)."""
    import cv2

    x1, y1, x2, y2 = points[:, 0], points[:, 1], points[:, 2], points[:, 3]
    # first row is the long axis; the boundary walks down one side and back up the other
    xs = np.concatenate([x1[1:], x2[1:][::-1]])
    ys = np.concatenate([y1[1:], y2[1:][::-1]])
    poly = np.rint(np.stack([xs, ys], axis=1)).astype(np.int32)
    mask = np.zeros((h, w), dtype=np.uint8)
    cv2.fillPoly(mask, [poly], 1)
    return mask


def _load_tracings(root: str) -> dict:
    path = os.path.join(root, TRACINGS_NAME)
    if not os.path.exists(path):
        return {}
    table = pd.read_csv(path)
    grouped = {}
    for (name, _frame), rows in table.groupby(["FileName", "Frame"]):
        grouped.setdefault(str(name), []).append(
            rows[["X1", "Y1", "X2", "Y2"]].to_numpy(dtype=np.float64)
        )
    return grouped


def _make_loader(tracings_for_file):
    def loader(path):
        frames = load_video(path)
        mask = None
        if tracings_for_file:
            h, w = frames.shape[:2]
            union = np.zeros((h, w), dtype=np.uint8)
            for points in tracings_for_file:
                if len(points) >= 3:
                    union |= rasterize_tracing(points, h, w)
            mask = np.repeat(union[:, :, None], frames.shape[2], axis=2)
        return frames, mask

    return loader


def ingest_echonet_layout(root: str, clip_length: int = 64, period: int = 1) -> IngestResult:
    """Map an EchoNet-style directory onto train/val/test splits.

    Rows with missing video files or unparsable fields are skipped and
    logged; a missing file-list table is fatal.
    """
    filelist_path = os.path.join(root, FILELIST_NAME)
    if not os.path.exists(filelist_path):
        raise IngestError(f"missing file-list table {filelist_path!r}")
    table = pd.read_csv(filelist_path)
    for col in ("FileName", "EF", "Split"):
        if col not in table.columns:
            raise IngestError(f"file-list table lacks required column {col!r}")

    tracings = _load_tracings(root)
    if not tracings:
        log.info("no tracings table found; region masks will be absent")

    videos = {name: [] for name in _SPLIT_NAMES.values()}
    skipped = []
    for row in table.itertuples():
        name = str(row.FileName)
        stem = name[:-4] if name.lower().endswith(".avi") else name
        try:
            ef = float(row.EF)
            split = _SPLIT_NAMES[str(row.Split).strip().upper()]
        except (KeyError, TypeError, ValueError):
            skipped.append((name, "unparsable row"))
            continue
        if not (LABEL_MIN <= ef <= LABEL_MAX):
            skipped.append((name, f"EF {ef} outside [{LABEL_MIN}, {LABEL_MAX}]"))
            continue
        path = os.path.join(root, VIDEO_DIR, stem + ".avi")
        if not os.path.exists(path):
            skipped.append((name, "video file missing"))
            continue
        per_file = tracings.get(stem + ".avi") or tracings.get(stem)
        videos[split].append(
            SourceVideo(id=stem, label=ef, path=path, loader=_make_loader(per_file))
        )

    for name, reason in skipped:
        log.warning("skipping %r: %s", name, reason)

    splits = {
        name: DatasetSplit(clips, name, default_policy(name, clip_length, period))
        for name, clips in videos.items()
    }
    check_splits_disjoint(splits)
    return IngestResult(splits=splits, skipped=skipped)
