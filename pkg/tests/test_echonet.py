import os

import numpy as np
import pytest

from protoreg.data.echonet import ingest_echonet_layout, load_video
from protoreg.errors import IngestError

cv2 = pytest.importorskip("cv2")


def write_avi(path, n_frames=12, size=32, value=128):
    writer = cv2.VideoWriter(
        str(path), cv2.VideoWriter_fourcc(*"MJPG"), 30.0, (size, size)
    )
    for t in range(n_frames):
        frame = np.full((size, size, 3), value, dtype=np.uint8)
        frame[: 4 + t % 4] = 30  # mild variation so encoding is non-trivial
        writer.write(frame)
    writer.release()


@pytest.fixture
def echonet_root(tmp_path):
    videos = tmp_path / "Videos"
    videos.mkdir()
    for name in ("V1", "V2", "V3", "V5"):
        write_avi(videos / f"{name}.avi")
    (tmp_path / "FileList.csv").write_text(
        "FileName,EF,Split\n"
        "V1,62.3,TRAIN\n"
        "V2,35.0,TRAIN\n"
        "V3,55.1,VAL\n"
        "V4,48.0,TEST\n"      # file missing
        "V5,not-a-number,TEST\n"
        "V6,200.0,TRAIN\n"    # EF out of range, file also missing
    )
    # a triangle-ish tracing for V1 only
    rows = ["FileName,X1,Y1,X2,Y2,Frame"]
    for i, (x1, y1, x2, y2) in enumerate(
        [(16, 4, 16, 28), (10, 8, 22, 8), (8, 14, 24, 14), (10, 20, 22, 20), (12, 26, 20, 26)]
    ):
        rows.append(f"V1.avi,{x1},{y1},{x2},{y2},0")
    (tmp_path / "VolumeTracings.csv").write_text("\n".join(rows) + "\n")
    return tmp_path


class TestIngestion:
    def test_rows_mapped_to_splits(self, echonet_root):
        result = ingest_echonet_layout(str(echonet_root))
        train_ids = {v.id: v.label for v in result["train"].clips}
        assert train_ids == {"V1": 62.3, "V2": 35.0}
        assert [v.id for v in result["val"].clips] == ["V3"]
        assert result["test"].clips == []

    def test_missing_video_lands_in_skip_log(self, echonet_root):
        result = ingest_echonet_layout(str(echonet_root))
        skipped = dict(result.skipped)
        assert "V4" in skipped and "missing" in skipped["V4"]
        all_ids = {v.id for s in result.splits.values() for v in s.clips}
        assert "V4" not in all_ids

    def test_unparsable_rows_skipped(self, echonet_root):
        result = ingest_echonet_layout(str(echonet_root))
        skipped = dict(result.skipped)
        assert "V5" in skipped
        assert "V6" in skipped

    def test_missing_filelist_is_fatal(self, tmp_path):
        with pytest.raises(IngestError):
            ingest_echonet_layout(str(tmp_path))

    def test_video_decodes_to_unit_range(self, echonet_root):
        frames = load_video(str(echonet_root / "Videos" / "V1.avi"))
        assert frames.ndim == 3
        assert frames.shape[2] == 12
        assert 0.0 <= frames.min() and frames.max() <= 1.0

    def test_traced_video_gets_mask(self, echonet_root):
        result = ingest_echonet_layout(str(echonet_root))
        by_id = {v.id: v for v in result["train"].clips}
        mask = by_id["V1"].get_mask()
        assert mask is not None
        assert mask.shape == by_id["V1"].get_frames().shape
        assert mask.sum() > 0
        # V2 has no tracing, so no mask
        assert by_id["V2"].get_mask() is None

    def test_no_tracings_table_means_no_masks(self, echonet_root):
        os.remove(echonet_root / "VolumeTracings.csv")
        result = ingest_echonet_layout(str(echonet_root))
        assert all(v.get_mask() is None for v in result["train"].clips)
