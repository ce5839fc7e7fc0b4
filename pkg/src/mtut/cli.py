"""Operator entry point: corpus generation, training, evaluation, ablation.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
Flags override config-file keys; every run directory gets a manifest with the
fully resolved config so runs are reproducible bit for bit.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_config
from .domain import ModalityId
from .errors import CheckpointError, ConfigError, DataError, MtutError, NumericError
from .synthgen import generate_corpus, load_corpus, save_corpus
from .trainer import (
    ABLATION_VARIANTS,
    TrainHistory,
    fit,
    model_from_checkpoint,
    run_ablation,
    variant_config,
)

WORKERS_ENV = "MTUT_NUM_WORKERS"


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as ConfigError (exit code 1)."""

    def error(self, message):
        raise ConfigError(message)


def _effective_workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return 1
    try:
        cap = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    if cap < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1, got {cap}")
    return min(1, cap)  # loading is sequential; the env var only caps it


def _load_cfg(args, extra_overrides: dict | None = None) -> ExperimentConfig:
    overrides = dict(extra_overrides or {})
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "missing", None) is not None:
        overrides["trainer.missing"] = args.missing
    return load_config(args.config, overrides)


def _write_manifest(out_dir: Path, cfg: ExperimentConfig, extra: dict) -> None:
    manifest = {
        "tool_version": __version__,
        "config": cfg.to_dict(),
        "effective_workers": _effective_workers(),
        **extra,
    }
    with open(out_dir / "run_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_synth(args) -> int:
    cfg = _load_cfg(args)
    out_dir = Path(args.out)
    if out_dir.exists() and any(out_dir.iterdir()) and not args.force:
        raise DataError(f"output directory {out_dir} is not empty (pass --force to overwrite)")
    corpus = generate_corpus(
        cfg.seed,
        cfg.corpus.num_identities,
        cfg.corpus.per_identity,
        cfg.dims,
        corruption=cfg.corruption,
        params=cfg.generator,
    )
    save_corpus(corpus, out_dir, force=args.force)
    counts = corpus.split_counts()
    print(f"wrote corpus to {out_dir}")
    print(
        f"  identities: {corpus.num_classes}   samples: {len(corpus)}   "
        f"splits: train={counts['train']} val={counts['val']} test={counts['test']}"
    )
    print(
        f"  image {cfg.dims.height}x{cfg.dims.width}x{cfg.dims.channels}, "
        f"cloud {cfg.dims.points}x{cfg.dims.point_features}, "
        f"attrs {cfg.dims.attr_dim}"
    )
    print(f"  corpus hash: {corpus.content_hash()}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    if args.ablation is not None:
        cfg = variant_config(cfg, args.ablation)
    corpus = load_corpus(args.corpus)
    resume = load_checkpoint(args.resume) if args.resume else None
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    ckpt, history = fit(corpus, cfg, resume_from=resume)
    save_checkpoint(out_dir / "last.ckpt", ckpt)
    best = _best_checkpoint(ckpt)
    save_checkpoint(out_dir / "best.ckpt", best)
    history.to_long_csv(out_dir / "history.csv")
    _write_manifest(
        out_dir,
        cfg,
        {
            "corpus_hash": corpus.content_hash(),
            "ablation": args.ablation,
            "epochs_completed": ckpt.epoch,
            "best_epoch": ckpt.best["epoch"],
            "best_val_accuracy": ckpt.best["val_accuracy"],
        },
    )
    final = history.rows[-1]
    print(
        f"trained {ckpt.epoch} epochs (missing={cfg.trainer.missing}); "
        f"final val accuracy {final['val_accuracy']:.4f}, "
        f"best {ckpt.best['val_accuracy']:.4f} at epoch {ckpt.best['epoch']}"
    )
    print(f"checkpoints: {out_dir / 'last.ckpt'}, {out_dir / 'best.ckpt'}")
    return 0


def _best_checkpoint(ckpt: Checkpoint) -> Checkpoint:
    """Checkpoint whose model arrays are the best-val-accuracy snapshot.

    Intended for evaluation; resume from last.ckpt (optimizer and rng state
    there belong to the final epoch)."""
    return Checkpoint(
        config=ckpt.config,
        epoch=ckpt.best["epoch"],
        model_state=ckpt.best_model_state or ckpt.model_state,
        optimizer_state=ckpt.optimizer_state,
        rng_state=ckpt.rng_state,
        scheduler_state=ckpt.scheduler_state,
        trainer_state=ckpt.trainer_state,
        history=ckpt.history,
        best=ckpt.best,
        best_model_state=None,
    )


def cmd_eval(args) -> int:
    from .evalkit import evaluate

    ckpt = load_checkpoint(args.checkpoint)
    model, cfg = model_from_checkpoint(ckpt)
    corpus = load_corpus(args.corpus)
    modality = ModalityId(args.modality)
    available = cfg.trainer.missing_modality.other
    if modality is not available:
        raise ConfigError(
            f"modality {modality.value!r} was the missing training modality for this "
            f"checkpoint. Its encoder exists, but its classifier head was only "
            f"trained as the gate's auxiliary head (aux_mode={cfg.losses.aux_mode}), "
            f"so it is not a deployment classifier. Evaluate {available.value!r} instead."
        )
    report = evaluate(model, corpus, args.split, modality, batch_size=cfg.eval.batch_size)
    out_dir = Path(args.out)
    report_path = report.save(out_dir)
    print(
        f"{args.split} split, modality {modality.value}: "
        f"accuracy {report.accuracy:.4f}, macro-F1 {report.macro_f1:.4f}, "
        f"macro OvR AUC {report.macro_ovr_auc:.4f}"
    )
    print(f"report: {report_path}")
    return 0


def _ablate_job(corpus_dir: str, cfg_dict: dict, variant: str, seed: int) -> dict:
    corpus = load_corpus(corpus_dir)
    cfg = replace(ExperimentConfig.from_dict(cfg_dict), seed=seed)
    return run_ablation(corpus, variant, cfg)


def cmd_ablate(args) -> int:
    import csv

    cfg = _load_cfg(args)
    corpus = load_corpus(args.corpus)  # fail fast on bad data
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = [cfg.seed + i for i in range(args.seeds)]
    jobs = [(variant, seed) for variant in ABLATION_VARIANTS for seed in seeds]

    if args.parallel > 1:
        import multiprocessing as mp

        ctx = mp.get_context("spawn")
        with ctx.Pool(args.parallel) as pool:
            rows = pool.starmap(
                _ablate_job,
                [(args.corpus, cfg.to_dict(), v, s) for v, s in jobs],
            )
    else:
        rows = []
        for variant, seed in jobs:
            row = run_ablation(corpus, variant, replace(cfg, seed=seed))
            print(
                f"  {row['variant']:<14s} seed {row['seed']}: "
                f"accuracy {row['accuracy']:.4f}, macro-F1 {row['macro_f1']:.4f}"
            )
            rows.append(row)

    table_path = out_dir / "ablation.csv"
    with open(table_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["variant", "seed", "modality", "accuracy", "macro_f1",
             "accuracy_std", "macro_f1_std", "corpus_hash"]
        )
        for row in rows:
            writer.writerow(
                [row["variant"], row["seed"], row["modality"],
                 f"{row['accuracy']:.17g}", f"{row['macro_f1']:.17g}", "", "",
                 row["corpus_hash"]]
            )
        import numpy as np

        for variant in ABLATION_VARIANTS:
            vrows = [r for r in rows if r["variant"] == variant]
            acc = np.array([r["accuracy"] for r in vrows])
            f1 = np.array([r["macro_f1"] for r in vrows])
            writer.writerow(
                [variant, "mean", vrows[0]["modality"],
                 f"{acc.mean():.17g}", f"{f1.mean():.17g}",
                 f"{acc.std():.17g}", f"{f1.std():.17g}", vrows[0]["corpus_hash"]]
            )
    _write_manifest(out_dir, cfg, {"corpus_hash": corpus.content_hash(), "seeds": seeds})
    print(f"ablation table: {table_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mtut", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic paired corpus")
    p_synth.add_argument("--config", default=None, help="YAML config path")
    p_synth.add_argument("--out", required=True, help="corpus output directory")
    p_synth.add_argument("--seed", type=int, default=None)
    p_synth.add_argument("--force", action="store_true", help="overwrite non-empty dir")
    p_synth.set_defaults(func=cmd_synth)

    p_train = sub.add_parser("train", help="train on a corpus directory")
    p_train.add_argument("--config", default=None)
    p_train.add_argument("--corpus", required=True)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--missing", choices=["image", "points"], default=None,
                         help="modality absent at test time")
    p_train.add_argument("--ablation", choices=list(ABLATION_VARIANTS), default=None)
    p_train.add_argument("--resume", default=None, help="checkpoint to continue from")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on one modality")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--corpus", required=True)
    p_eval.add_argument("--modality", choices=["image", "points"], required=True)
    p_eval.add_argument("--split", choices=["train", "val", "test"], default="test")
    p_eval.add_argument("--out", required=True)
    p_eval.set_defaults(func=cmd_eval)

    p_ablate = sub.add_parser("ablate", help="run the five-variant ablation grid")
    p_ablate.add_argument("--config", default=None)
    p_ablate.add_argument("--corpus", required=True)
    p_ablate.add_argument("--out", required=True)
    p_ablate.add_argument("--seed", type=int, default=None)
    p_ablate.add_argument("--seeds", type=int, default=3, help="seeds per variant")
    p_ablate.add_argument("--parallel", type=int, default=1,
                          help="worker processes (re-loads the corpus per worker)")
    p_ablate.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except MtutError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
