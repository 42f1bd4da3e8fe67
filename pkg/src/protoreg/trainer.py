"""Joint training loop: per-group Adam, epoch schedule, terminal projection,
checkpointing with exact resume."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import torch

from protoreg import losses
from protoreg.config import TrainConfig
from protoreg.data.augment import augment_rotate
from protoreg.data.sampling import balance_by_oversampling, sample_clip
from protoreg.data.types import DatasetSplit, SamplingPolicy, START_RULE_UNIFORM, START_RULE_ZERO
from protoreg.errors import ConfigError, NumericalError
from protoreg.features import clips_to_tensor, downsample_masks
from protoreg.losses import BatchContext, loss_total
from protoreg.model import PrototypeVideoRegressor, init_weights
from protoreg.prototypes import project_prototypes

log = logging.getLogger(__name__)

GROUP_NAMES = ("backbone", "feature_roi", "regression", "prototypes")


@dataclass
class TrainState:
    model: PrototypeVideoRegressor
    optimizer: torch.optim.Optimizer
    epoch: int = 0  # number of completed epochs
    history: List[dict] = field(default_factory=list)
    best_val_mae: float = float("inf")


@dataclass
class TrainResult:
    final_path: str
    best_path: str
    history: List[dict]
    out_dir: str


class MetricsLogger:
    """Append-only JSONL writer for per-step and per-epoch records."""

    def __init__(self, path: Optional[str], append: bool = False):
        self.path = path
        if path:
            os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
            if not append:
                # truncate any stale log from a previous run in the same dir
                open(path, "w").close()

    def write(self, record: dict) -> None:
        if self.path:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(record) + "\n")


def init_model(config: TrainConfig) -> PrototypeVideoRegressor:
    """Build the model with all randomness drawn from the config seed."""
    config.validate()
    generator = torch.Generator().manual_seed(config.seed)
    model = PrototypeVideoRegressor.from_config(config, generator)
    init_weights(model.extractor, generator)
    return model


def build_optimizer(model: PrototypeVideoRegressor, config: TrainConfig) -> torch.optim.Adam:
    groups = model.parameter_groups()
    lrs = {
        "backbone": config.lr_backbone,
        "feature_roi": config.lr_feature_roi,
        "regression": config.lr_regression,
        "prototypes": config.lr_prototypes,
    }
    return torch.optim.Adam(
        [{"params": groups[name], "lr": lrs[name], "name": name} for name in GROUP_NAMES]
    )


def _train_policy(config: TrainConfig) -> SamplingPolicy:
    return SamplingPolicy(config.clip_length, config.sample_period, START_RULE_UNIFORM)


def _eval_policy(config: TrainConfig) -> SamplingPolicy:
    return SamplingPolicy(config.clip_length, config.sample_period, START_RULE_ZERO)


def _batch_indices(n: int, batch_size: int):
    for lo in range(0, n, batch_size):
        yield range(lo, min(lo + batch_size, n))


def _loss_parts(model, out, labels, masks, config: TrainConfig, weights) -> dict:
    ctx = BatchContext(
        similarities=out["similarities"],
        sample_labels=labels,
        prototype_labels=model.bank.labels,
        occurrence_maps=out["maps"],
        lv_masks=masks,
        delta_l=config.delta_l,
        k=config.k,
    )
    parts = {
        "mse": losses.loss_mse(out["prediction"], labels),
        "clst": losses.loss_cluster(ctx),
        "psd": losses.loss_psd(ctx),
        "pas": losses.loss_pas(model.bank, config.delta_l),
    }
    if weights.lambda_occur > 0 and masks is not None:
        grid_masks = downsample_masks(masks, out["maps"].shape[2:])
        ctx.lv_masks = grid_masks
        parts["occur"] = losses.loss_occurrence(ctx, rho=weights.rho)
    return parts


def train_epoch(state: TrainState, split: DatasetSplit, config: TrainConfig,
                weights=None, metrics_logger: MetricsLogger = None) -> dict:
    """One pass over oversampled, augmented, clip-sampled batches.

    Batch composition and every random draw derive from (seed, epoch), so a
    resumed run replays the epoch identically.
    """
    epoch = state.epoch
    weights = weights or config.loss_weights()
    rng = np.random.default_rng((config.seed, epoch))
    balanced = balance_by_oversampling(split, config.oversample_threshold, rng)
    order = rng.permutation(len(balanced.clips))
    policy = _train_policy(config)

    state.model.train()
    sums, n_steps = {}, 0
    abs_err, n_seen = 0.0, 0
    for step, batch in enumerate(_batch_indices(len(order), config.batch_size)):
        clips = []
        for i in batch:
            clip = sample_clip(balanced.clips[order[i]], policy, rng)
            clips.append(augment_rotate(clip, config.max_rotate_degrees, rng))
        x, labels, masks = clips_to_tensor(clips)
        out = state.model(x)
        parts = _loss_parts(state.model, out, labels, masks, config, weights)
        try:
            total, breakdown = loss_total(parts, weights)
        except NumericalError as exc:
            ids = [c.id for c in clips]
            log.error("aborting at epoch %d step %d; batch ids %s", epoch, step, ids)
            raise NumericalError(f"{exc} (epoch {epoch}, step {step}, batch {ids})") from exc
        state.optimizer.zero_grad()
        total.backward()
        torch.nn.utils.clip_grad_norm_(state.model.parameters(), config.grad_clip_norm)
        state.optimizer.step()

        with torch.no_grad():
            abs_err += (out["prediction"] - labels).abs().sum().item()
        n_seen += len(clips)
        for key, value in breakdown.items():
            sums[key] = sums.get(key, 0.0) + value
        n_steps += 1
        if metrics_logger:
            metrics_logger.write({"kind": "step", "epoch": epoch, "step": step, **breakdown})

    metrics = {key: value / n_steps for key, value in sums.items()}
    metrics["train_mae"] = abs_err / max(n_seen, 1)
    return metrics


@torch.no_grad()
def validate(model: PrototypeVideoRegressor, split: DatasetSplit, config: TrainConfig) -> dict:
    """Deterministic pass (start index 0, no augmentation) collecting predictions."""
    model.eval()
    ids, ys, preds = [], [], []
    for batch in _batch_indices(len(split.clips), config.batch_size):
        clips = [sample_clip(split.clips[i], _eval_policy(config)) for i in batch]
        x, labels, _ = clips_to_tensor(clips)
        out = model(x)
        ids += [c.id for c in clips]
        ys += labels.tolist()
        preds += out["prediction"].tolist()
    ys_arr, preds_arr = np.array(ys), np.array(preds)
    return {
        "ids": ids,
        "labels": ys_arr,
        "predictions": preds_arr,
        "mae": float(np.abs(ys_arr - preds_arr).mean()) if len(ids) else float("nan"),
    }


@torch.no_grad()
def iter_projection_features(model: PrototypeVideoRegressor, split: DatasetSplit,
                             config: TrainConfig, with_maps: bool = True):
    """Yield (pooled_rows, label, clip_id, start, maps) per training sample."""
    model.eval()
    policy = _eval_policy(config)
    for batch in _batch_indices(len(split.clips), config.batch_size):
        clips = [sample_clip(split.clips[i], policy) for i in batch]
        x, labels, _ = clips_to_tensor(clips)
        out = model(x)
        for i, clip in enumerate(clips):
            maps = out["maps"][i] if with_maps else None
            yield (out["pooled"][i], float(labels[i]), clip.id, clip.start_index, maps)


def run_projection(model: PrototypeVideoRegressor, split: DatasetSplit,
                   config: TrainConfig) -> None:
    project_prototypes(
        model.bank, iter_projection_features(model, split, config), config.delta_l
    )


def _mask_availability(split: DatasetSplit) -> bool:
    return all(c.get_mask() is not None for c in split.clips)


def effective_loss_weights(config: TrainConfig, train_split: DatasetSplit):
    """Force the occurrence weight to 0 when any training video lacks a mask."""
    weights = config.loss_weights()
    if weights.lambda_occur > 0 and not _mask_availability(train_split):
        log.warning("region masks absent; occurrence regularizer weight forced to 0")
        weights.lambda_occur = 0.0
    return weights


def save_checkpoint(path: str, state: TrainState, config: TrainConfig) -> None:
    """Single-archive checkpoint; contents restricted to tensors and primitives."""
    model_state = state.model.state_dict()
    payload = {
        "model": model_state,
        "optimizer": state.optimizer.state_dict(),
        "config": config.to_dict(),
        "epoch": state.epoch,
        "history": state.history,
        "best_val_mae": state.best_val_mae,
        "projection_records": state.model.bank.projection_records,
        "torch_rng": torch.get_rng_state(),
        "manifest": {name: list(t.shape) for name, t in model_state.items()},
    }
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path: str) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"checkpoint not found: {path}")
    return torch.load(path, map_location="cpu", weights_only=True)


def state_from_checkpoint(payload: dict) -> tuple:
    """Rebuild (TrainState, TrainConfig) from a checkpoint payload."""
    config = TrainConfig.from_dict(payload["config"])
    model = init_model(config)
    model.load_state_dict(payload["model"])
    model.bank.projection_records = list(payload.get("projection_records", []))
    optimizer = build_optimizer(model, config)
    optimizer.load_state_dict(payload["optimizer"])
    state = TrainState(
        model=model,
        optimizer=optimizer,
        epoch=payload["epoch"],
        history=list(payload.get("history", [])),
        best_val_mae=payload.get("best_val_mae", float("inf")),
    )
    if "torch_rng" in payload:
        torch.set_rng_state(payload["torch_rng"])
    return state, config


def run_training(config: TrainConfig, data: dict, out_dir: str,
                 resume_from: str = None) -> TrainResult:
    """Full schedule: epochs of train+validate, terminal projection, checkpoints.

    Saves ``best.pt`` (lowest validation MAE), ``last.pt`` (rolling, for
    resume), and ``final.pt`` (after projection). Metrics land in
    ``metrics.jsonl``; the effective config in ``config.yaml``.
    """
    config.validate()
    os.makedirs(out_dir, exist_ok=True)
    train_split, val_split = data["train"], data.get("val") or data["train"]

    if resume_from:
        state, config = state_from_checkpoint(load_checkpoint(resume_from))
    else:
        model = init_model(config)
        state = TrainState(model=model, optimizer=build_optimizer(model, config))
    metrics_logger = MetricsLogger(os.path.join(out_dir, "metrics.jsonl"),
                                   append=bool(resume_from))

    config.to_yaml(os.path.join(out_dir, "config.yaml"))
    weights = effective_loss_weights(config, train_split)
    best_path = os.path.join(out_dir, "best.pt")
    last_path = os.path.join(out_dir, "last.pt")
    final_path = os.path.join(out_dir, "final.pt")

    for epoch in range(state.epoch, config.epochs):
        state.epoch = epoch
        train_metrics = train_epoch(state, train_split, config, weights, metrics_logger)
        val_metrics = validate(state.model, val_split, config)
        record = {
            "kind": "epoch", "epoch": epoch, "val_mae": val_metrics["mae"],
            **{f"lr_{g['name']}": g["lr"] for g in state.optimizer.param_groups},
            **train_metrics,
        }

        is_last = epoch == config.epochs - 1
        if is_last and config.projection_epoch == "last":
            run_projection(state.model, train_split, config)
            post = validate(state.model, val_split, config)
            record["val_mae_projected"] = post["mae"]
            log.info("projected prototypes; val MAE %.3f -> %.3f",
                     val_metrics["mae"], post["mae"])

        state.history.append(record)
        metrics_logger.write(record)
        state.epoch = epoch + 1
        if val_metrics["mae"] < state.best_val_mae:
            state.best_val_mae = val_metrics["mae"]
            save_checkpoint(best_path, state, config)
        save_checkpoint(last_path, state, config)
        log.info("epoch %d: train MAE %.3f, val MAE %.3f",
                 epoch, train_metrics["train_mae"], val_metrics["mae"])

    save_checkpoint(final_path, state, config)
    if not os.path.exists(best_path):
        save_checkpoint(best_path, state, config)
    return TrainResult(final_path=final_path, best_path=best_path,
                       history=state.history, out_dir=out_dir)
