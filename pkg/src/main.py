"""
Flash Anti-Spoofing Pipeline — Main Orchestrator.
Subcommands: generate → train → eval, plus the ablation grid, the N₀ sweep
and run stats.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from typing import Optional

import pandas as pd

from src.config import (
    CHECKPOINT_FILE,
    GATED_MODES,
    LOG_LEVEL,
    RunConfig,
    echo_config,
    load_run_config,
)
from src.errors import AtrFasError, ConfigError, DataError

# Configure logging
logging.basicConfig(
    level=getattr(logging, LOG_LEVEL, logging.INFO),
    format="%(asctime)s [%(levelname)s] %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S",
)
logger = logging.getLogger(__name__)


def _banner(title: str):
    logger.info("=" * 60)
    logger.info(title)
    logger.info("=" * 60)


def _load_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_run_config(args.config, args.seed)
    if getattr(args, "jobs", None):
        cfg.run.jobs = args.jobs
    if getattr(args, "mode", None):
        cfg.train.mode = args.mode
    if getattr(args, "epochs", None) is not None:
        cfg.train.epochs = args.epochs
    if getattr(args, "folds", None):
        cfg.eval.folds = args.folds
    cfg.train.validate()
    return cfg


def _train_config_for(cfg: RunConfig, samples) -> "TrainConfig":  # noqa: F821
    """Frame count follows the data, not the config file."""
    n0 = samples[0].sequence.n0 if samples else cfg.train.n0
    if n0 != cfg.train.n0:
        logger.info(f"  ℹ️ Dataset has N0={n0}; overriding configured n0={cfg.train.n0}")
    return dataclasses.replace(cfg.train, n0=n0)


# ============================================
# generate
# ============================================

def cmd_generate(args: argparse.Namespace) -> int:
    from src.capture.synthgen import generate_dataset

    cfg = _load_config(args)
    out_dir = args.out_dir or cfg.paths.data_dir
    _banner("🎨 GENERATE — Synthetic Flash Captures")

    dataset = generate_dataset(cfg.generator, out_dir, cfg.seed, cfg.run.jobs)
    echo_config(cfg, out_dir)

    counts = dataset.counts()
    print(counts.to_csv(sep="\t", index=False, lineterminator="\n"), end="")
    logger.info(f"✅ Dataset ready: {len(dataset)} samples in {out_dir}")
    return 0


# ============================================
# train
# ============================================

def cmd_train(args: argparse.Namespace) -> int:
    from src.capture.dataset import load_dataset
    from src.history_tracker import log_run
    from src.training.trainer import train

    cfg = _load_config(args)
    data_dir = args.data_dir or cfg.paths.data_dir
    out_dir = args.out_dir or cfg.paths.out_dir
    ckpt = os.path.join(out_dir, CHECKPOINT_FILE)
    if os.path.exists(ckpt) and not args.force:
        raise DataError(f"{ckpt} already exists (use --force to overwrite)")

    _banner(f"🏋️ TRAIN — mode {cfg.train.mode}")
    samples = load_dataset(data_dir).split("train")
    train_cfg = _train_config_for(cfg, samples)
    echo_config(cfg, out_dir)

    result = train(samples, train_cfg, out_dir)
    last = result.history.iloc[-1].to_dict() if len(result.history) else {}
    log_run(
        out_dir, "train", train_cfg.mode, cfg.seed,
        {"best_val_eer": result.best_val_eer, "dev_threshold": result.dev_threshold, **last},
    )
    logger.info(f"✅ Training complete: {result.checkpoint_path}")
    return 0


# ============================================
# eval
# ============================================

def _read_scores_file(path: str):
    """CSV/TSV with columns score, label and optional split (dev/test)."""
    from src.evaluation.metrics import ScoreSet

    if not os.path.exists(path):
        raise DataError(f"Scores file not found: {path}")
    df = pd.read_csv(path, sep=None, engine="python")
    if not {"score", "label"} <= set(df.columns):
        raise DataError(f"{path} needs 'score' and 'label' columns")
    if "split" in df.columns:
        dev = df[df["split"] == "dev"]
        test = df[df["split"] != "dev"]
        if dev.empty:
            raise DataError(f"{path} has a split column but no 'dev' rows")
    else:
        logger.warning(
            f"  ⚠️ {path} has no split column; the HTER threshold is chosen on the evaluated "
            "scores themselves, so HTER is optimistic"
        )
        dev, test = df, df
    as_set = lambda part: ScoreSet(part["score"].to_numpy(), part["label"].to_numpy())  # noqa: E731
    return as_set(dev), as_set(test)


def cmd_eval(args: argparse.Namespace) -> int:
    from src.capture.dataset import load_dataset
    from src.evaluation.metrics import eer, evaluate
    from src.evaluation.reporting import format_eval_summary, format_table, write_roc_csv
    from src.history_tracker import log_run
    from src.model.checkpoint import load_checkpoint
    from src.training.trainer import gate_accuracy, input_frame_count, predict

    cfg = _load_config(args)
    out_dir = args.out_dir or cfg.paths.out_dir
    _banner("📊 EVAL — EER / HTER")

    gate_acc = None
    if args.scores_file:
        dev, test = _read_scores_file(args.scores_file)
        threshold = eer(dev)[1]
        setting = "scores-file"
    else:
        ckpt_path = args.checkpoint or os.path.join(out_dir, CHECKPOINT_FILE)
        model, meta = load_checkpoint(ckpt_path)
        mode = meta.get("mode", cfg.train.mode)
        if args.mode and args.mode != mode:
            raise ConfigError(f"checkpoint was trained in mode {mode}, not {args.mode}")
        test_samples = load_dataset(args.data_dir or cfg.paths.data_dir).split("test")
        if not test_samples:
            raise DataError("Dataset has no test split")
        diffnorm = meta.get("diffnorm", "dn")
        expected = input_frame_count(test_samples[0].sequence.n0, diffnorm)
        if expected != model.n_frames:
            raise ConfigError(
                f"checkpoint expects {model.n_frames} input frames, dataset gives {expected} ({diffnorm})"
            )
        preds = predict(model, test_samples, mode, diffnorm, meta.get("input_standardize", False))
        test = preds.scores
        threshold = meta.get("dev_threshold", 0.5)
        setting = mode
        if mode in GATED_MODES:
            gate_acc = gate_accuracy(preds)

    report = evaluate(test, threshold)
    echo_config(cfg, out_dir)
    write_roc_csv(report, os.path.join(out_dir, "roc.csv"))

    row = {"setting": setting, "eer": report.eer, "eer_threshold": report.eer_threshold,
           "hter": report.hter, "far": report.far, "frr": report.frr, "threshold": report.threshold}
    if gate_acc is not None:
        row["gate_acc"] = gate_acc
    print(format_table(pd.DataFrame([row])), end="")
    logger.info("\n" + format_eval_summary(report, f"Evaluation ({setting})"))
    log_run(out_dir, "eval", setting, cfg.seed, {k: v for k, v in row.items() if k != "setting"})
    return 0


# ============================================
# ablate
# ============================================

def cmd_ablate(args: argparse.Namespace) -> int:
    from src.capture.dataset import load_dataset
    from src.evaluation.ablation import run_ablation
    from src.evaluation.reporting import format_ablation_table, format_table, write_table
    from src.history_tracker import log_run

    cfg = _load_config(args)
    out_dir = args.out_dir or cfg.paths.out_dir
    settings = [s.strip() for s in args.modes.split(",") if s.strip()] if args.modes else list(cfg.eval.settings)
    _banner(f"🧪 ABLATE — {len(settings)} settings, {cfg.eval.folds}-fold")

    samples = load_dataset(args.data_dir or cfg.paths.data_dir).samples
    echo_config(cfg, out_dir)
    results = run_ablation(samples, settings, _train_config_for(cfg, samples), k=cfg.eval.folds, jobs=cfg.run.jobs)

    table = format_ablation_table(results)
    write_table(results, os.path.join(out_dir, "ablation.tsv"))
    print(format_table(table), end="")
    for _, r in results.iterrows():
        log_run(out_dir, "ablate", r["setting"], cfg.seed, {"eer": r["eer_mean"], "eer_std": r["eer_std"],
                                                             "hter": r["hter_mean"], "hter_std": r["hter_std"]})
    logger.info("✅ Ablation complete")
    return 0


# ============================================
# sweep-n0
# ============================================

def cmd_sweep_n0(args: argparse.Namespace) -> int:
    from src.evaluation.reporting import format_table, write_table
    from src.evaluation.sweep import sweep_n0
    from src.history_tracker import log_run

    cfg = _load_config(args)
    out_dir = args.out_dir or cfg.paths.out_dir
    n0_values = [int(v) for v in args.n0.split(",")] if args.n0 else list(cfg.eval.n0_values)
    _banner(f"⏱️ SWEEP — N0 in {n0_values}")

    echo_config(cfg, out_dir)
    table = sweep_n0(cfg.generator, cfg.train, n0_values, cfg.seed, cfg.eval.timing_runs, cfg.run.jobs)
    write_table(table, os.path.join(out_dir, "sweep_n0.tsv"))
    print(format_table(table), end="")
    for _, r in table.iterrows():
        log_run(out_dir, "sweep-n0", f"n0={int(r['n0'])}", cfg.seed,
                {"eer": r["eer"], "hter": r["hter"], "N": int(r["N"])})
    logger.info("✅ Sweep complete")
    return 0


# ============================================
# stats
# ============================================

def cmd_stats(args: argparse.Namespace) -> int:
    from src.evaluation.reporting import format_table
    from src.history_tracker import get_run_stats

    cfg = _load_config(args)
    out_dir = args.out_dir or cfg.paths.out_dir
    _banner(f"📈 STATS — best EER per setting in {out_dir}")

    stats = get_run_stats(out_dir)
    if stats.empty:
        logger.warning(f"  ⚠️ No runs with an EER logged in {out_dir}")
    print(format_table(stats), end="")
    return 0


# ============================================
# CLI
# ============================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Flash face anti-spoofing pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser):
        p.add_argument("--config", help="Run config file (INI sections: run, generator, train, eval, paths)")
        p.add_argument("--seed", type=int, help="Override the global seed")
        p.add_argument("--jobs", type=int, help="Parallel workers for rendering / folds")
        p.add_argument("--out-dir", help="Output directory")

    p = sub.add_parser("generate", help="Render a synthetic flash dataset")
    common(p)
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("train", help="Train a model on the dataset's train split")
    common(p)
    p.add_argument("--data-dir", help="Dataset directory")
    p.add_argument("--mode", help="Forward mode (woMEMM, Avg, ..., DGM)")
    p.add_argument("--epochs", type=int, help="Override the epoch count")
    p.add_argument("--force", action="store_true", help="Overwrite an existing checkpoint")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="Evaluate a checkpoint on the test split")
    common(p)
    p.add_argument("--checkpoint", help="Checkpoint path (default: <out-dir>/model.ckpt)")
    p.add_argument("--data-dir", help="Dataset directory")
    p.add_argument("--mode", help="Expected checkpoint mode")
    p.add_argument("--scores-file", help="Evaluate precomputed scores (columns score,label[,split])")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("ablate", help="Run the ablation grid with k-fold evaluation")
    common(p)
    p.add_argument("--data-dir", help="Dataset directory")
    p.add_argument("--modes", help="Comma-separated settings (default: full grid)")
    p.add_argument("--folds", type=int, help="Override the fold count")
    p.add_argument("--epochs", type=int, help="Override the epoch count")
    p.set_defaults(handler=cmd_ablate)

    p = sub.add_parser("sweep-n0", help="Accuracy and inference time against N0")
    common(p)
    p.add_argument("--n0", help="Comma-separated N0 values (default: 3..8)")
    p.add_argument("--epochs", type=int, help="Override the epoch count")
    p.set_defaults(handler=cmd_sweep_n0)

    p = sub.add_parser("stats", help="Best EER per setting from the output directory's run ledger")
    common(p)
    p.set_defaults(handler=cmd_stats)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    """Entry point with CLI argument handling; returns the process exit code."""
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except KeyboardInterrupt:
        logger.info("⛔ Interrupted by user")
        return 1
    except AtrFasError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return e.exit_code
    except Exception as e:
        logger.error(f"❌ Command failed: {e}", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
