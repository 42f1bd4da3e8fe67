"""Explanation artifacts: score sheets, activation overlays, prototype PCA."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import torch

from protoreg.data.types import VideoClip
from protoreg.errors import ValidationError
from protoreg.evaluation import BETA_CUTOFF
from protoreg.features import clips_to_tensor, upsample_map_to_input
from protoreg.prototypes import ScoreSheet, pairwise_cosine, score_sample

log = logging.getLogger(__name__)


@dataclass
class ExplanationBundle:
    """Everything needed to show why one clip got its prediction."""

    clip_id: str
    score_sheet: ScoreSheet
    input_maps: Dict[int, np.ndarray]  # prototype index -> T x H x W map in [0, 1]
    prototype_refs: Dict[int, Optional[dict]]  # -> {clip_id, start_index, label, map}
    warnings: List[str] = field(default_factory=list)

    def contributing(self) -> List[int]:
        return sorted(self.input_maps)


def build_explanation(clip: VideoClip, model, beta_cutoff: float = BETA_CUTOFF,
                      ) -> ExplanationBundle:
    """Score one clip and upsample the maps of every contributing prototype.

    Prototypes at or below the beta cutoff are omitted entirely. When the
    bank is unprojected (or a contributor has no projection record), source
    fields stay None and a warning is attached.
    """
    warnings = []
    if not model.bank.is_projected():
        warnings.append("bank is not projected; explanations lack source clips")
        log.warning("explaining with an unprojected bank (clip %s)", clip.id)
    model.eval()
    with torch.no_grad():
        x, _, _ = clips_to_tensor([clip])
        out = model(x)
        sheet = score_sample(out["pooled"][0], model.bank, model.tau,
                             clip_id=clip.id, ground_truth=clip.label)
        t, h, w = x.shape[2:]
        input_maps, refs = {}, {}
        for row in sheet.rows:
            if row.beta <= beta_cutoff:
                continue
            k = row.prototype_index
            up = upsample_map_to_input(out["maps"][0, k], (t, h, w))
            input_maps[k] = up.numpy()
            record = None
            if k < len(model.bank.projection_records):
                record = model.bank.projection_records[k]
            if record and record.get("projected"):
                source_map = record.get("occurrence_map")
                refs[k] = {
                    "clip_id": record["clip_id"],
                    "start_index": record["start_index"],
                    "label": record["source_label"],
                    "map": None if source_map is None else np.asarray(source_map),
                }
            else:
                refs[k] = None
                warnings.append(f"prototype {k} has no projection source")
    return ExplanationBundle(clip_id=clip.id, score_sheet=sheet,
                             input_maps=input_maps, prototype_refs=refs,
                             warnings=warnings)


def overlay_rgb(frames: np.ndarray, heat: np.ndarray, alpha: float = 0.45) -> np.ndarray:
    """Blend a [0, 1] heat map over grayscale frames; returns (T, H, W, 3) uint8.

    ``frames`` is H x W x T (or H x W x T x 1), ``heat`` is T x H x W.
    """
    from matplotlib import cm

    if frames.ndim == 4:
        frames = frames[..., 0]
    gray = np.transpose(frames, (2, 0, 1))  # T H W
    if gray.shape != heat.shape:
        raise ValidationError(f"frames {gray.shape} vs heat {heat.shape}")
    colored = cm.jet(heat)[..., :3]  # T H W 3
    blended = (1 - alpha) * gray[..., None] + alpha * colored
    return np.clip(blended * 255.0, 0, 255).astype(np.uint8)


def write_gif(rgb_frames: np.ndarray, path: str, fps: int = 12) -> None:
    from PIL import Image

    images = [Image.fromarray(frame) for frame in rgb_frames]
    images[0].save(path, save_all=True, append_images=images[1:],
                   duration=int(1000 / fps), loop=0)


def write_still_grid(rgb_frames: np.ndarray, path: str, n_stills: int = 4) -> None:
    """A horizontal strip of evenly spaced frames."""
    from PIL import Image

    t = rgb_frames.shape[0]
    picks = np.linspace(0, t - 1, min(n_stills, t)).round().astype(int)
    strip = np.concatenate([rgb_frames[i] for i in picks], axis=1)
    Image.fromarray(strip).save(path)


def save_bundle(bundle: ExplanationBundle, clip: VideoClip, out_dir: str,
                source_clips: dict = None) -> str:
    """Write the documented per-clip folder layout.

    ``<out_dir>/<clip_id>/score_sheet.json`` plus, per contributing prototype
    k, ``overlay_p<k>.gif`` (input overlay video), ``overlay_p<k>_grid.png``
    (still grid) and, when the prototype's source clip is resolvable through
    ``source_clips``, ``prototype_p<k>_grid.png``.
    """
    clip_dir = os.path.join(out_dir, bundle.clip_id)
    os.makedirs(clip_dir, exist_ok=True)
    record = bundle.score_sheet.to_dict()
    record["warnings"] = bundle.warnings
    record["prototype_sources"] = {
        str(k): (None if ref is None else
                 {key: ref[key] for key in ("clip_id", "start_index", "label")})
        for k, ref in bundle.prototype_refs.items()
    }
    with open(os.path.join(clip_dir, "score_sheet.json"), "w") as fh:
        json.dump(record, fh, indent=2)

    for k, heat in bundle.input_maps.items():
        rgb = overlay_rgb(clip.frames, heat)
        write_gif(rgb, os.path.join(clip_dir, f"overlay_p{k}.gif"))
        write_still_grid(rgb, os.path.join(clip_dir, f"overlay_p{k}_grid.png"))
        ref = bundle.prototype_refs.get(k)
        if ref and source_clips and ref["clip_id"] in source_clips and ref["map"] is not None:
            source = source_clips[ref["clip_id"]]
            frames = source.get_frames() if hasattr(source, "get_frames") else source
            t, h, w = frames.shape[2], frames.shape[0], frames.shape[1]
            heat_src = upsample_map_to_input(torch.as_tensor(ref["map"]).float(), (t, h, w))
            rgb_src = overlay_rgb(frames, heat_src.numpy())
            write_still_grid(rgb_src, os.path.join(clip_dir, f"prototype_p{k}_grid.png"))
    return clip_dir


@dataclass
class PcaPlotData:
    coords: np.ndarray  # (n_points, 2)
    color_values: np.ndarray  # ground-truth labels per point
    is_prototype: np.ndarray  # bool per point


def pca_prototype_plot(bank, pooled_features, feature_labels, top_n: int = 100,
                       out_png: str = None) -> PcaPlotData:
    """2D PCA of prototypes and their nearest validation features.

    ``pooled_features`` is (n, m, D): per-sample feature rows per prototype.
    For each prototype the ``top_n`` most-similar rows (by cosine) join the
    PCA fit; duplicates (same sample, same prototype row) are dropped.
    """
    from sklearn.decomposition import PCA

    vectors = bank.vectors.detach()
    m, d = vectors.shape
    if m < 2:
        raise ValidationError("PCA plot needs at least 2 prototypes")
    pooled = torch.as_tensor(pooled_features, dtype=vectors.dtype)
    labels = np.asarray(feature_labels, dtype=np.float64)
    selected = set()
    for k in range(m):
        rows = pooled[:, k, :]
        sims = pairwise_cosine(rows, vectors[k:k + 1])[:, 0]
        top = torch.argsort(sims, descending=True)[: min(top_n, rows.shape[0])]
        selected.update((int(i), k) for i in top.tolist())
    feature_points = torch.stack([pooled[i, k] for i, k in sorted(selected)]) \
        if selected else torch.empty(0, d)
    feature_colors = np.array([labels[i] for i, _ in sorted(selected)])

    points = torch.cat([vectors, feature_points]).numpy()
    if np.allclose(points.var(axis=0), 0.0):
        raise ValidationError("degenerate covariance: all points identical")
    coords = PCA(n_components=2).fit_transform(points)
    colors = np.concatenate([bank.labels.numpy().astype(np.float64), feature_colors])
    is_proto = np.zeros(len(points), dtype=bool)
    is_proto[:m] = True
    data = PcaPlotData(coords=coords, color_values=colors, is_prototype=is_proto)

    if out_png:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 5))
        feats = ~data.is_prototype
        sc = ax.scatter(coords[feats, 0], coords[feats, 1], c=colors[feats],
                        cmap="viridis", marker="*", s=24, alpha=0.7, label="features")
        ax.scatter(coords[data.is_prototype, 0], coords[data.is_prototype, 1],
                   c=colors[data.is_prototype], cmap="viridis", marker="o", s=120,
                   edgecolors="black", label="prototypes")
        fig.colorbar(sc, ax=ax, label="label")
        ax.legend()
        ax.set_xlabel("PC 1")
        ax.set_ylabel("PC 2")
        fig.tight_layout()
        fig.savefig(out_png, dpi=120)
        plt.close(fig)
    return data
