"""Regression/classification metrics, explanation-quality metrics, reports."""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np
import torch

from protoreg.errors import ValidationError
from protoreg.prototypes import pairwise_cosine

BETA_CUTOFF = 0.01  # a prototype "contributes" when its beta exceeds this


def _to_arrays(pairs_or_y, yhat=None):
    if yhat is None:
        pairs = list(pairs_or_y)
        y = np.array([p[0] for p in pairs], dtype=np.float64)
        yhat = np.array([p[1] for p in pairs], dtype=np.float64)
    else:
        y = np.asarray(pairs_or_y, dtype=np.float64)
        yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise ValidationError(f"shape mismatch: {y.shape} vs {yhat.shape}")
    return y, yhat


def compute_regression_metrics(pairs_or_y, yhat=None):
    """(r2, mae, rmse) with standard definitions; r2 = 1 - SS_res / SS_tot.

    Returns r2 = nan when the labels have zero variance (undefined baseline).
    """
    y, pred = _to_arrays(pairs_or_y, yhat)
    if y.size < 2:
        raise ValidationError("r2 needs at least 2 samples")
    residual = y - pred
    mae = float(np.abs(residual).mean())
    rmse = float(np.sqrt((residual**2).mean()))
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        return float("nan"), mae, rmse
    r2 = 1.0 - float((residual**2).sum()) / ss_tot
    return r2, mae, rmse


def compute_f1_below_threshold(pairs_or_y, yhat=None, threshold: float = 40.0) -> float:
    """F1 of the "label below threshold" class after binarizing both sides.

    Convention for the empty case: 1.0 when there are neither true nor
    predicted positives, otherwise zero-division terms count as 0.
    """
    y, pred = _to_arrays(pairs_or_y, yhat)
    true_pos_set = y < threshold
    pred_pos_set = pred < threshold
    tp = int(np.sum(true_pos_set & pred_pos_set))
    fp = int(np.sum(~true_pos_set & pred_pos_set))
    fn = int(np.sum(true_pos_set & ~pred_pos_set))
    if tp == fp == fn == 0:
        return 1.0
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def compute_sparsity_diversity(betas: np.ndarray, cutoff: float = BETA_CUTOFF):
    """Counting metrics over contribution matrices (rows sum to 1).

    sparsity: mean fraction of prototypes a single prediction relies on.
    diversity: fraction of prototypes relied on by at least one prediction.
    """
    betas = np.asarray(betas, dtype=np.float64)
    if betas.ndim != 2:
        raise ValidationError("betas must be (n_samples, m)")
    if not np.allclose(betas.sum(axis=1), 1.0, atol=1e-5):
        raise ValidationError("each beta row must sum to 1")
    active = betas > cutoff
    m = betas.shape[1]
    sparsity = float(active.sum(axis=1).mean() / m)
    diversity = float(active.any(axis=0).sum() / m)
    return sparsity, diversity


def mean_far_label_angular_distance(vectors, labels, delta_l: float) -> float:
    """Mean arccos(cs)/pi over prototype pairs with label gap > delta_l."""
    vectors = torch.as_tensor(np.asarray(vectors, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.float64)
    cs = pairwise_cosine(vectors, vectors).numpy()
    gap = np.abs(labels[:, None] - labels[None, :])
    i, j = np.nonzero(np.triu(gap > delta_l, k=1))
    if len(i) == 0:
        return float("nan")
    return float(np.mean(np.arccos(np.clip(cs[i, j], -1.0, 1.0)) / math.pi))


@dataclass
class EvalReport:
    r2: float
    mae: float
    rmse: float
    f1_below_40: float
    sparsity: float
    diversity: float
    n_samples: int
    split_name: str = ""
    per_sample: List[dict] = field(default_factory=list)

    def __post_init__(self):
        if not math.isnan(self.r2) and self.r2 > 1.0 + 1e-9:
            raise ValidationError(f"r2 {self.r2} exceeds 1")
        if self.mae > self.rmse + 1e-9:
            raise ValidationError(f"mae {self.mae} exceeds rmse {self.rmse}")
        if not (0.0 <= self.f1_below_40 <= 1.0):
            raise ValidationError("f1 must be in [0, 1]")

    @property
    def r2_defined(self) -> bool:
        return not math.isnan(self.r2)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        lines = [
            f"split:       {self.split_name or '(unnamed)'}",
            f"n_samples:   {self.n_samples}",
            f"r2:          {self.r2:.4f}" + ("" if self.r2_defined else "  (undefined: zero label variance)"),
            f"mae:         {self.mae:.4f}",
            f"rmse:        {self.rmse:.4f}",
            f"f1_below_40: {self.f1_below_40:.4f}",
            f"sparsity:    {self.sparsity:.4f}",
            f"diversity:   {self.diversity:.4f}",
        ]
        return "\n".join(lines)

    def save(self, out_dir: str, stem: str = "eval_report") -> None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, f"{stem}.json"), "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
        with open(os.path.join(out_dir, f"{stem}.txt"), "w") as fh:
            fh.write(self.to_text() + "\n")


def evaluate_model(model, split, config) -> EvalReport:
    """Run the deterministic eval pass and assemble the full report."""
    # local imports keep evaluation importable without the training stack
    from protoreg.data.sampling import sample_clip
    from protoreg.features import clips_to_tensor
    from protoreg.trainer import _batch_indices, _eval_policy

    model.eval()
    ids, ys, preds, betas = [], [], [], []
    with torch.no_grad():
        for batch in _batch_indices(len(split.clips), config.batch_size):
            clips = [sample_clip(split.clips[i], _eval_policy(config)) for i in batch]
            x, labels, _ = clips_to_tensor(clips)
            out = model(x)
            ids += [c.id for c in clips]
            ys += labels.tolist()
            preds += out["prediction"].tolist()
            betas.append(out["beta"].numpy())
    beta_matrix = np.concatenate(betas, axis=0)
    r2, mae, rmse = compute_regression_metrics(ys, preds)
    f1 = compute_f1_below_threshold(ys, preds)
    sparsity, diversity = compute_sparsity_diversity(beta_matrix)
    per_sample = []
    for i, clip_id in enumerate(ids):
        top = np.argsort(beta_matrix[i])[::-1][:3]
        per_sample.append({
            "id": clip_id,
            "y": float(ys[i]),
            "y_hat": float(preds[i]),
            "top_prototypes": [int(k) for k in top],
            "top_betas": [float(beta_matrix[i, k]) for k in top],
        })
    return EvalReport(
        r2=r2, mae=mae, rmse=rmse, f1_below_40=f1,
        sparsity=sparsity, diversity=diversity,
        n_samples=len(ids), split_name=split.split_name, per_sample=per_sample,
    )
