"""Command-line entry point: synth / train / eval / project / explain.

Exit codes: 0 success, 2 usage or config problems, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from protoreg.config import TrainConfig
from protoreg.errors import ConfigError, IngestError, NumericalError, ValidationError

log = logging.getLogger("protoreg")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _add_synth(sub):
    p = sub.add_parser("synth", help="generate a synthetic dataset on disk")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-val", type=int, default=40)
    p.add_argument("--n-test", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", type=int, default=64, help="frame height/width")
    p.add_argument("--frames", type=int, default=96, help="frames per source video")
    p.add_argument("--period", type=int, default=32, help="pulsation cycle length")
    p.add_argument("--area-max", type=float, default=700.0)
    p.add_argument("--noise-std", type=float, default=0.05)
    p.add_argument("--label-min", type=float, default=12.0)
    p.add_argument("--label-max", type=float, default=88.0)


def _add_train(sub):
    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", help="YAML config; desk-scale defaults when omitted")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--data-format", choices=("synthetic", "echonet"), default="synthetic")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--resume", help="checkpoint to resume from")
    for flag, kind in (("--epochs", int), ("--seed", int), ("--m", int),
                       ("--batch-size", int), ("--variant", str),
                       ("--lambda-pas", float), ("--lambda-occur", float),
                       ("--tau", float), ("--clip-length", int), ("--img-size", int)):
        p.add_argument(flag, type=kind, default=None, help="override config value")


def _add_eval(sub):
    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--data-format", choices=("synthetic", "echonet"), default="synthetic")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--out", required=True)


def _add_project(sub):
    p = sub.add_parser("project", help="project prototypes onto training features")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--data-format", choices=("synthetic", "echonet"), default="synthetic")
    p.add_argument("--out", required=True, help="path for the projected checkpoint")


def _add_explain(sub):
    p = sub.add_parser("explain", help="render explanation bundles for clips")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--data-format", choices=("synthetic", "echonet"), default="synthetic")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--clip-ids", nargs="*", default=None,
                   help="ids to explain; default: first 3 of the split")
    p.add_argument("--out", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="protoreg",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    _add_synth(sub)
    _add_train(sub)
    _add_eval(sub)
    _add_project(sub)
    _add_explain(sub)
    return parser


def _load_splits(args):
    if args.data_format == "echonet":
        from protoreg.data.echonet import ingest_echonet_layout

        result = ingest_echonet_layout(args.data)
        for name, reason in result.skipped:
            log.warning("skipped %s: %s", name, reason)
        return result.splits
    from protoreg.data.synthetic import load_dataset

    return load_dataset(args.data)


def cmd_synth(args) -> int:
    from protoreg.data.synthetic import SynthSpec, export_dataset, generate_synthetic_dataset

    spec = SynthSpec(
        grid_size=(args.grid, args.grid),
        num_frames=args.frames,
        period_frames=args.period,
        area_max=args.area_max,
        area_min=args.area_max * 0.5,  # placeholder; per-video labels drive area_min
        noise_std=args.noise_std,
        seed=args.seed,
    ).validate()
    splits = generate_synthetic_dataset(
        {"train": args.n_train, "val": args.n_val, "test": args.n_test},
        base_spec=spec,
        label_range=(args.label_min, args.label_max),
        seed=args.seed,
    )
    manifests = export_dataset(splits, args.out)
    for name, split in splits.items():
        labels = split.labels()
        if len(labels) == 0:
            continue
        hist, edges = np.histogram(labels, bins=8, range=(10, 90))
        print(f"{name}: {len(labels)} clips, labels in [{labels.min():.1f}, {labels.max():.1f}]")
        print("  histogram [10,90]:", " ".join(str(int(c)) for c in hist))
        print(f"  manifest: {os.path.abspath(manifests[name])}")
    return EXIT_OK


def cmd_train(args) -> int:
    from protoreg.trainer import run_training

    config = TrainConfig.from_yaml(args.config) if args.config else TrainConfig.desk_scale()
    config = config.with_overrides(
        epochs=args.epochs, seed=args.seed, m=args.m, batch_size=args.batch_size,
        variant=args.variant, lambda_pas=args.lambda_pas, lambda_occur=args.lambda_occur,
        tau=args.tau, clip_length=args.clip_length, img_size=args.img_size,
    )
    splits = _load_splits(args)
    result = run_training(config, splits, args.out, resume_from=args.resume)
    last = result.history[-1]
    print(f"final checkpoint: {os.path.abspath(result.final_path)}")
    print(f"best checkpoint:  {os.path.abspath(result.best_path)}")
    print(f"final val MAE: {last.get('val_mae_projected', last['val_mae']):.3f}")
    return EXIT_OK


def _load_model(checkpoint_path: str):
    from protoreg.trainer import load_checkpoint, state_from_checkpoint

    state, config = state_from_checkpoint(load_checkpoint(checkpoint_path))
    return state, config


def cmd_eval(args) -> int:
    from protoreg.evaluation import evaluate_model

    state, config = _load_model(args.checkpoint)
    splits = _load_splits(args)
    if args.split not in splits:
        raise ConfigError(f"split {args.split!r} not present in {args.data!r}")
    report = evaluate_model(state.model, splits[args.split], config)
    report.save(args.out)
    config.to_yaml(os.path.join(args.out, "config.yaml"))
    print(report.to_text())
    print(f"report: {os.path.abspath(os.path.join(args.out, 'eval_report.json'))}")
    return EXIT_OK


def cmd_project(args) -> int:
    from protoreg.trainer import run_projection, save_checkpoint

    state, config = _load_model(args.checkpoint)
    splits = _load_splits(args)
    run_projection(state.model, splits["train"], config)
    save_checkpoint(args.out, state, config)
    n_ok = sum(1 for r in state.model.bank.projection_records if r and r.get("projected"))
    print(f"projected {n_ok}/{state.model.bank.num_prototypes} prototypes")
    print(f"checkpoint: {os.path.abspath(args.out)}")
    return EXIT_OK


def cmd_explain(args) -> int:
    from protoreg.data.sampling import sample_clip
    from protoreg.explain import build_explanation, save_bundle
    from protoreg.trainer import _eval_policy

    state, config = _load_model(args.checkpoint)
    splits = _load_splits(args)
    split = splits[args.split]
    by_id = {video.id: video for video in split.clips}
    wanted = args.clip_ids or [v.id for v in split.clips[:3]]
    skipped, done = [], 0
    os.makedirs(args.out, exist_ok=True)
    config.to_yaml(os.path.join(args.out, "config.yaml"))
    for clip_id in wanted:
        if clip_id not in by_id:
            skipped.append(clip_id)
            continue
        clip = sample_clip(by_id[clip_id], _eval_policy(config))
        bundle = build_explanation(clip, state.model)
        train_by_id = {v.id: v for v in splits.get("train", split).clips}
        path = save_bundle(bundle, clip, args.out, source_clips=train_by_id)
        print(f"explained {clip_id} -> {os.path.abspath(path)}")
        done += 1
    if skipped:
        skip_log = os.path.join(args.out, "skipped_ids.txt")
        with open(skip_log, "w") as fh:
            fh.write("\n".join(skipped) + "\n")
        print(f"unknown clip ids logged to {os.path.abspath(skip_log)}")
    return EXIT_OK if done else EXIT_CONFIG


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "synth": cmd_synth,
        "train": cmd_train,
        "eval": cmd_eval,
        "project": cmd_project,
        "explain": cmd_explain,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, ValidationError, IngestError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
