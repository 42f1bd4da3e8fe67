import math

import numpy as np
import pytest

from protoreg.data.synthetic import (
    SynthSpec,
    export_dataset,
    generate_synthetic,
    generate_synthetic_dataset,
    load_dataset,
    render_ellipse_mask,
)
from protoreg.errors import ValidationError


class TestSpecValidation:
    def test_equal_areas_rejected(self):
        with pytest.raises(ValidationError):
            SynthSpec(area_max=1000.0, area_min=1000.0, grid_size=(64, 64)).validate()

    def test_min_above_max_rejected(self):
        with pytest.raises(ValidationError):
            SynthSpec(area_max=400.0, area_min=500.0).validate()

    def test_label_below_range_rejected(self):
        # areas valid but derived label 5 < 10
        with pytest.raises(ValidationError):
            SynthSpec(area_max=700.0, area_min=665.0).validate()

    def test_direct_label_arithmetic(self):
        spec = SynthSpec(area_max=1000.0, area_min=400.0, grid_size=(80, 80))
        assert spec.label == pytest.approx(60.0, abs=1e-12)

    def test_oversized_ellipse_rejected(self):
        with pytest.raises(ValidationError):
            SynthSpec(area_max=4000.0, area_min=1600.0, grid_size=(64, 64)).validate()


class TestGeneration:
    def test_determinism_bit_identical(self):
        spec = SynthSpec(seed=11, num_frames=12)
        a = generate_synthetic(spec, 2)
        b = generate_synthetic(spec, 2)
        for va, vb in zip(a.clips, b.clips):
            assert np.array_equal(va.frames, vb.frames)
            assert np.array_equal(va.mask, vb.mask)
            assert va.id == vb.id

    def test_label_attached_to_every_video(self):
        spec = SynthSpec(area_max=1000.0, area_min=400.0, grid_size=(80, 80), num_frames=8)
        split = generate_synthetic(spec, 3)
        assert len(split.clips) == 3
        assert all(v.label == pytest.approx(60.0) for v in split.clips)

    def test_rendered_area_reproduces_label(self):
        # max/min mask areas must match the analytic label within 2 points
        for label in (15.0, 40.0, 60.0, 85.0):
            spec = SynthSpec(area_max=700.0, area_min=700.0 * (1 - label / 100),
                             seed=int(label), noise_std=0.0, num_frames=64)
            video = generate_synthetic(spec, 1).clips[0]
            areas = video.mask.sum(axis=(0, 1)).astype(np.float64)
            rendered = 100.0 * (areas.max() - areas.min()) / areas.max()
            assert abs(rendered - label) < 2.0

    def test_area_oscillates_with_declared_period(self):
        spec = SynthSpec(seed=2, noise_std=0.0, num_frames=64, period_frames=32)
        video = generate_synthetic(spec, 1).clips[0]
        areas = video.mask.sum(axis=(0, 1)).astype(np.float64)
        # one full cycle apart the area repeats
        assert np.abs(areas[:32] - areas[32:]).max() <= max(2.0, 0.01 * areas.max())

    def test_frames_in_unit_range_and_mask_binary(self):
        video = generate_synthetic(SynthSpec(seed=4, num_frames=8), 1).clips[0]
        assert video.frames.min() >= 0.0 and video.frames.max() <= 1.0
        assert set(np.unique(video.mask)) <= {0, 1}

    def test_invalid_count_rejected(self):
        with pytest.raises(ValidationError):
            generate_synthetic(SynthSpec(), 0)


class TestEllipseRasterizer:
    def test_area_close_to_analytic(self):
        mask = render_ellipse_mask(64, 64, (31.5, 31.5), (14.0, 9.0))
        assert mask.sum() == pytest.approx(math.pi * 14.0 * 9.0, rel=0.02)

    def test_rotation_preserves_area(self):
        base = render_ellipse_mask(64, 64, (31.5, 31.5), (14.0, 9.0))
        rot = render_ellipse_mask(64, 64, (31.5, 31.5), (14.0, 9.0), angle_rad=0.7)
        assert abs(int(base.sum()) - int(rot.sum())) <= 12


class TestDatasetGeneration:
    def test_labels_span_requested_range(self):
        splits = generate_synthetic_dataset({"train": 60}, seed=3, label_range=(12, 88))
        labels = splits["train"].labels()
        assert labels.min() >= 12.0 and labels.max() <= 88.0
        hist, _ = np.histogram(labels, bins=8, range=(10, 90))
        assert (hist > 0).sum() >= 6

    def test_split_sizes_and_disjoint_ids(self):
        splits = generate_synthetic_dataset({"train": 6, "val": 3, "test": 2}, seed=1)
        assert [len(splits[s]) for s in ("train", "val", "test")] == [6, 3, 2]
        ids = [v.id for s in splits.values() for v in s.clips]
        assert len(ids) == len(set(ids))


class TestExportRoundTrip:
    def test_export_load_preserves_labels_and_shapes(self, tmp_path):
        splits = generate_synthetic_dataset(
            {"train": 3, "val": 2}, seed=5,
            base_spec=SynthSpec(grid_size=(24, 24), num_frames=10, period_frames=5,
                                area_max=100.0, area_min=40.0),
        )
        export_dataset(splits, str(tmp_path))
        loaded = load_dataset(str(tmp_path), clip_length=8)
        assert set(loaded) == {"train", "val"}
        for name in loaded:
            orig = {v.id: v for v in splits[name].clips}
            for video in loaded[name].clips:
                ref = orig[video.id]
                assert video.label == pytest.approx(ref.label)
                frames = video.get_frames()
                assert frames.shape == ref.frames.shape
                # uint8 round trip quantizes to 1/255
                assert np.abs(frames - ref.frames).max() <= (0.5 / 255) + 1e-6
                assert np.array_equal(video.get_mask(), ref.mask)

    def test_export_is_deterministic(self, tmp_path):
        splits = generate_synthetic_dataset(
            {"train": 2}, seed=9,
            base_spec=SynthSpec(grid_size=(24, 24), num_frames=8, period_frames=4,
                                area_max=100.0, area_min=40.0),
        )
        export_dataset(splits, str(tmp_path / "a"))
        export_dataset(splits, str(tmp_path / "b"))
        a = (tmp_path / "a" / "train" / "manifest.csv").read_text()
        b = (tmp_path / "b" / "train" / "manifest.csv").read_text()
        assert a == b  # manifest paths are root-relative, so files match exactly
