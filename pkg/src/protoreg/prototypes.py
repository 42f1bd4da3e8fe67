"""Prototype bank, similarity scoring, label-weighted regression head, projection."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Iterable, List, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from protoreg.data.types import LABEL_MAX, LABEL_MIN
from protoreg.errors import ValidationError

log = logging.getLogger(__name__)

COSINE_EPS = 1e-8


def cosine_similarity(f: torch.Tensor, p: torch.Tensor, eps: float = COSINE_EPS) -> torch.Tensor:
    """f.p / max(|f||p|, eps), clamped to [-1, 1]; broadcasts over leading dims.

    The floor guard (rather than an additive eps) keeps the score exactly
    scale invariant whenever the norm product exceeds eps, and sends genuine
    zero vectors to 0.
    """
    dot = (f * p).sum(dim=-1)
    denom = (f.norm(dim=-1) * p.norm(dim=-1)).clamp(min=eps)
    return (dot / denom).clamp(-1.0, 1.0)


def pairwise_cosine(a: torch.Tensor, b: torch.Tensor, eps: float = COSINE_EPS) -> torch.Tensor:
    """All-pairs cosine similarity between rows of a (n, D) and b (m, D)."""
    dots = a @ b.T
    denom = (a.norm(dim=1)[:, None] * b.norm(dim=1)[None, :]).clamp(min=eps)
    return (dots / denom).clamp(-1.0, 1.0)


class PrototypeBank(nn.Module):
    """m learnable prototype vectors with fixed-at-init labels and importances.

    ``vectors`` and ``importance`` are trained; ``labels`` only change when a
    prototype is projected onto a training feature. ``projection_records``
    keeps the provenance needed for case-based explanations.
    """

    def __init__(self, vectors: torch.Tensor, labels: torch.Tensor, importance: torch.Tensor):
        super().__init__()
        if vectors.dim() != 2 or labels.numel() != vectors.shape[0] or \
                importance.numel() != vectors.shape[0]:
            raise ValidationError("vectors must be (m, D) with matching labels/importance")
        if bool((labels < LABEL_MIN).any() or (labels > LABEL_MAX).any()):
            raise ValidationError(f"prototype labels must lie in [{LABEL_MIN}, {LABEL_MAX}]")
        self.vectors = nn.Parameter(vectors.clone())
        self.importance = nn.Parameter(importance.clone())
        self.register_buffer("labels", labels.clone())
        self.register_buffer("projected", torch.tensor(False))
        self.projection_records: List[Optional[dict]] = [None] * vectors.shape[0]

    @classmethod
    def init_random(cls, num_prototypes: int, feature_dim: int,
                    generator: torch.Generator = None) -> "PrototypeBank":
        """Unit-norm gaussian vectors, importance 1, labels evenly spanning [10, 90]."""
        vecs = torch.randn(num_prototypes, feature_dim, generator=generator)
        vecs = F.normalize(vecs, dim=1)
        labels = torch.linspace(LABEL_MIN, LABEL_MAX, num_prototypes)
        return cls(vecs, labels, torch.ones(num_prototypes))

    @property
    def num_prototypes(self) -> int:
        return self.vectors.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.vectors.shape[1]

    def is_projected(self) -> bool:
        return bool(self.projected.item())


def regression_head(similarities: torch.Tensor, bank: PrototypeBank, tau: float):
    """Temperature softmax over importance-scaled similarities, then label average.

    beta = softmax((s_k * theta_k) / tau) over all prototypes (max-subtracted
    inside softmax for overflow safety); prediction = sum_k beta_k * l_k.
    Accepts (m,) or (n, m) similarity tensors.
    """
    if tau <= 0:
        raise ValidationError(f"temperature must be > 0, got {tau}")
    logits = similarities * bank.importance / tau
    beta = F.softmax(logits, dim=-1)
    prediction = beta @ bank.labels.to(beta.dtype)
    return beta, prediction


@dataclass
class ScoreRow:
    prototype_index: int
    label: float
    theta: float
    similarity: float
    beta: float


@dataclass
class ScoreSheet:
    """Per-sample explanation record; the beta-weighted label sum IS the prediction."""

    clip_id: str
    prediction: float
    rows: List[ScoreRow] = field(default_factory=list)  # sorted by beta, descending
    ground_truth: Optional[float] = None

    def recompute_prediction(self) -> float:
        return sum(r.beta * r.label for r in self.rows)

    def to_dict(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "prediction": self.prediction,
            "ground_truth": self.ground_truth,
            "rows": [asdict(r) for r in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def score_sample(pooled: torch.Tensor, bank: PrototypeBank, tau: float,
                 clip_id: str = "", ground_truth: float = None) -> ScoreSheet:
    """Score one sample's pooled features (m, D) against the bank.

    Runs in float64 so the exported sheet is exactly faithful: summing its
    beta * label rows reproduces the recorded prediction.
    """
    if pooled.shape != (bank.num_prototypes, bank.feature_dim):
        raise ValidationError(
            f"pooled features {tuple(pooled.shape)} do not match bank "
            f"({bank.num_prototypes}, {bank.feature_dim})"
        )
    with torch.no_grad():
        sims = cosine_similarity(pooled.double(), bank.vectors.double())
        logits = sims * bank.importance.double() / tau
        beta = F.softmax(logits, dim=-1)
        prediction = beta @ bank.labels.double()
    theta = bank.importance.detach()
    order = torch.argsort(beta, descending=True)
    rows = [
        ScoreRow(
            prototype_index=int(k),
            label=float(bank.labels[k]),
            theta=float(theta[k]),
            similarity=float(sims[k]),
            beta=float(beta[k]),
        )
        for k in order.tolist()
    ]
    return ScoreSheet(clip_id=clip_id, prediction=float(prediction), rows=rows,
                      ground_truth=ground_truth)


def project_prototypes(bank: PrototypeBank, train_features: Iterable, delta_l: float = 5.0,
                       ) -> PrototypeBank:
    """Replace each prototype with its most-similar label-compatible training feature.

    ``train_features`` yields per-sample tuples ``(pooled_rows, label, clip_id)``
    with optional trailing ``start_index`` and ``occurrence_maps`` entries;
    ``pooled_rows`` is (m, D) holding that sample's feature vector for every
    prototype. Candidates for prototype j are samples with
    |label - l_j| < delta_l against the pre-projection labels; the winner (by
    cosine similarity, first-seen on ties) replaces vectors[j] verbatim and
    donates its label. Prototypes with no in-range candidate stay unchanged
    and are flagged in their record.
    """
    if delta_l <= 0:
        raise ValidationError(f"delta_l must be > 0, got {delta_l}")
    m = bank.num_prototypes
    ref_labels = bank.labels.detach().clone()
    ref_vectors = bank.vectors.detach().clone()
    best_sim = torch.full((m,), -torch.inf)
    best = [None] * m

    for item in train_features:
        rows, label, clip_id = item[0], float(item[1]), item[2]
        start_index = int(item[3]) if len(item) > 3 else 0
        maps = item[4] if len(item) > 4 else None
        rows = torch.as_tensor(rows, dtype=ref_vectors.dtype)
        if rows.shape != ref_vectors.shape:
            raise ValidationError(
                f"pooled rows {tuple(rows.shape)} do not match bank {tuple(ref_vectors.shape)}"
            )
        in_range = (ref_labels - label).abs() < delta_l
        if not bool(in_range.any()):
            continue
        sims = cosine_similarity(rows, ref_vectors)
        improved = in_range & (sims > best_sim)
        for j in torch.nonzero(improved, as_tuple=False).flatten().tolist():
            best_sim[j] = sims[j]
            best[j] = {
                "row": rows[j].clone(),
                "label": label,
                "clip_id": str(clip_id),
                "start_index": start_index,
                "map": None if maps is None else torch.as_tensor(maps)[j].clone(),
            }

    unprojected = []
    with torch.no_grad():
        for j in range(m):
            if best[j] is None:
                unprojected.append(j)
                bank.projection_records[j] = {
                    "prototype_index": j,
                    "projected": False,
                    "previous_label": float(ref_labels[j]),
                }
                continue
            bank.vectors[j] = best[j]["row"]
            bank.labels[j] = best[j]["label"]
            bank.projection_records[j] = {
                "prototype_index": j,
                "projected": True,
                "clip_id": best[j]["clip_id"],
                "start_index": best[j]["start_index"],
                "source_label": best[j]["label"],
                "previous_label": float(ref_labels[j]),
                "similarity": float(best_sim[j]),
                "occurrence_map": best[j]["map"],
            }
        bank.projected.fill_(True)
    if unprojected:
        log.warning("%d prototypes had no in-range training sample: %s",
                    len(unprojected), unprojected)
    return bank
