from protoreg.data.augment import augment_rotate, rotate_clip
from protoreg.data.echonet import IngestResult, ingest_echonet_layout
from protoreg.data.sampling import balance_by_oversampling, sample_clip
from protoreg.data.synthetic import (
    SynthSpec,
    export_dataset,
    generate_synthetic,
    generate_synthetic_dataset,
    load_dataset,
    render_ellipse_mask,
)
from protoreg.data.types import (
    DatasetSplit,
    SamplingPolicy,
    SourceVideo,
    VideoClip,
    check_splits_disjoint,
    default_policy,
)

__all__ = [
    "augment_rotate",
    "rotate_clip",
    "IngestResult",
    "ingest_echonet_layout",
    "balance_by_oversampling",
    "sample_clip",
    "SynthSpec",
    "export_dataset",
    "generate_synthetic",
    "generate_synthetic_dataset",
    "load_dataset",
    "render_ellipse_mask",
    "DatasetSplit",
    "SamplingPolicy",
    "SourceVideo",
    "VideoClip",
    "check_splits_disjoint",
    "default_policy",
]
