"""Training objectives: MSE, cluster, prototype-sample distance, angular
separation, occurrence regularizer, and their weighted total.

Conventions shared by every term (and mirrored by the loop oracles in the
test suite):

* cosine distance d = 1 - s, so the maximum distance is 2;
* every log(1 - x) is floored at EPS_LOG, i.e. log(max(1 - x, EPS_LOG)),
  which caps the singularity as x -> 1 and keeps the losses nonnegative;
* samples (or prototypes) whose candidate set is empty contribute 0 while
  still counting in the averaging denominator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import torch

from protoreg.errors import MasksUnavailableError, NumericalError, ValidationError
from protoreg.prototypes import pairwise_cosine

EPS_LOG = 1e-6
# keeps acos gradients finite when vectors align exactly
ACOS_BOUND = 1.0 - 1e-7


@dataclass
class LossWeights:
    lambda_mse: float = 1.0
    lambda_clst: float = 0.75
    lambda_psd: float = 0.5
    lambda_pas: float = 0.5
    lambda_occur: float = 0.3
    rho: float = 1e-3  # global L1 factor inside the occurrence term

    def __post_init__(self):
        for name, value in self.as_dict().items():
            if value < 0:
                raise ValidationError(f"loss weight {name} must be >= 0, got {value}")
        if self.rho < 0:
            raise ValidationError(f"rho must be >= 0, got {self.rho}")

    def as_dict(self) -> dict:
        return {
            "mse": self.lambda_mse,
            "clst": self.lambda_clst,
            "psd": self.lambda_psd,
            "pas": self.lambda_pas,
            "occur": self.lambda_occur,
        }


@dataclass
class BatchContext:
    """Everything the batch losses need, already on the feature grid."""

    similarities: torch.Tensor  # (n, m)
    sample_labels: torch.Tensor  # (n,)
    prototype_labels: torch.Tensor  # (m,)
    occurrence_maps: Optional[torch.Tensor] = None  # (n, m, T', H', W')
    lv_masks: Optional[torch.Tensor] = None  # (n, T', H', W'), binary
    delta_l: float = 5.0
    k: int = 3

    def __post_init__(self):
        if self.similarities.dim() != 2:
            raise ValidationError("similarities must be (n, m)")
        if self.similarities.shape[0] < 1:
            raise ValidationError("batch must contain at least one sample")
        if self.delta_l <= 0 or self.k < 1:
            raise ValidationError("delta_l must be > 0 and k >= 1")


def _floored_log(x: torch.Tensor) -> torch.Tensor:
    return torch.log(x.clamp(min=EPS_LOG))


def loss_mse(predictions: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    if predictions.shape != labels.shape:
        raise ValidationError(
            f"predictions {tuple(predictions.shape)} vs labels {tuple(labels.shape)}"
        )
    return ((predictions - labels) ** 2).mean()


def loss_cluster(ctx: BatchContext) -> torch.Tensor:
    """Pull samples toward label-compatible prototypes.

    For each sample, average the top-min(k, |in-range set|) similarities to
    prototypes within delta_l of its label; the loss is minus the batch mean,
    with empty in-range sets contributing 0.
    """
    s = ctx.similarities
    n, m = s.shape
    in_range = (ctx.sample_labels[:, None] - ctx.prototype_labels[None, :]).abs() < ctx.delta_l
    counts = in_range.sum(dim=1)
    kk = min(ctx.k, m)
    masked = torch.where(in_range, s, torch.full_like(s, -2.0))  # sentinel below any cosine
    top, _ = masked.topk(kk, dim=1)
    take = counts.clamp(max=kk)
    select = torch.arange(kk, device=s.device)[None, :] < take[:, None]
    sums = torch.where(select, top, torch.zeros_like(top)).sum(dim=1)
    means = torch.where(counts > 0, sums / take.clamp(min=1), torch.zeros_like(sums))
    return -means.mean()


def loss_psd(ctx: BatchContext) -> torch.Tensor:
    """Ensure each prototype has at least one nearby sample in the batch.

    Per prototype, take the smallest normalized cosine distance d/2 over the
    batch and penalize -log(1 - min).
    """
    d = 1.0 - ctx.similarities
    nearest = d.min(dim=0).values / 2.0
    return -_floored_log(1.0 - nearest).mean()


def angular_similarity(cs: torch.Tensor) -> torch.Tensor:
    """Monotone remap of cosine similarity to [0, 1]: 1 - arccos(cs) / pi."""
    cs = torch.as_tensor(cs).clamp(-1.0, 1.0)
    return 1.0 - torch.acos(cs) / torch.pi


def loss_pas(bank, delta_l: float) -> torch.Tensor:
    """Push prototypes with label gap > delta_l apart in angle.

    For each prototype, average log(1 - AS) over its far-label peers; the
    loss is minus the mean of those averages. Prototypes with no far-label
    peer contribute 0. The acos input is kept strictly inside (-1, 1) so
    gradients stay finite for exactly (anti)parallel vectors.
    """
    vectors, labels = bank.vectors, bank.labels
    m = vectors.shape[0]
    if m < 2:
        raise ValidationError("angular separation needs at least 2 prototypes")
    cs = pairwise_cosine(vectors, vectors).clamp(-ACOS_BOUND, ACOS_BOUND)
    far = (labels[:, None] - labels[None, :]).abs() > delta_l
    logs = _floored_log(1.0 - angular_similarity(cs))
    counts = far.sum(dim=1)
    sums = torch.where(far, logs, torch.zeros_like(logs)).sum(dim=1)
    per_prototype = torch.where(counts > 0, sums / counts.clamp(min=1), torch.zeros_like(sums))
    return -per_prototype.mean()


def loss_occurrence(ctx: BatchContext, rho: float = 1e-3) -> torch.Tensor:
    """L1 on occurrence activations outside the region mask.

    Mean of |M| over all (sample, prototype, cell) entries whose cell lies
    outside the mask, plus rho times the plain global L1 mean. An all-inside
    mask yields just the rho term.
    """
    if ctx.occurrence_maps is None:
        raise ValidationError("occurrence maps missing from batch context")
    if ctx.lv_masks is None:
        raise MasksUnavailableError(
            "batch has no region masks; set the occurrence weight to 0 instead"
        )
    maps = ctx.occurrence_maps
    outside = (ctx.lv_masks == 0).unsqueeze(1).to(maps.dtype)  # broadcast over prototypes
    abs_maps = maps.abs()
    penalty = (abs_maps * outside).sum()
    denom = outside.sum() * maps.shape[1]
    masked_mean = penalty / denom.clamp(min=1)
    return masked_mean + rho * abs_maps.mean()


def loss_total(parts: dict, weights: LossWeights):
    """Weighted sum of the loss parts plus a per-part breakdown.

    ``parts`` maps the names mse/clst/psd/pas/occur (missing entries count as
    0). Any non-finite part aborts with the offending part named.
    """
    weight_map = weights.as_dict()
    unknown = set(parts) - set(weight_map)
    if unknown:
        raise ValidationError(f"unknown loss parts: {sorted(unknown)}")
    breakdown = {}
    total = None
    logged_total = 0.0
    for name, weight in weight_map.items():
        part = parts.get(name)
        if part is None:
            continue
        part = torch.as_tensor(part)
        if not torch.isfinite(part):
            raise NumericalError(f"loss part {name!r} is non-finite: {part.detach().item()}")
        # breakdown bookkeeping in float64 so parts recombine to the logged total
        value = float(part.detach())
        breakdown[name] = value
        breakdown[f"weighted_{name}"] = weight * value
        logged_total += weight * value
        term = weight * part
        total = term if total is None else total + term
    if total is None:
        total = torch.tensor(0.0)
    breakdown["total"] = logged_total
    return total, breakdown
