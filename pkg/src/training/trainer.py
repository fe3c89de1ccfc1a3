"""
Trainer — End-to-End Joint Optimisation.
Seeded mini-batch Adam over the combined classification, depth and gate
losses, with per-epoch exponential learning-rate decay and checkpoint
selection on a held-out validation slice.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from src.config import ATTACK_TYPES, CHECKPOINT_FILE, GATED_MODES, TRAIN_LOG_FILE, TrainConfig
from src.errors import ConfigError, NumericError
from src.capture.diffnorm import align_frames, apply_diffnorm, build_adjacent_matrix, build_diff_matrix, standardize
from src.capture.synthgen import LabeledSample
from src.evaluation.metrics import ScoreSet, eer
from src.model.atrfas import RANDOM_GATE_MODES, AtrFasModel, forward, gate_parameter_names, tie_experts
from src.model.checkpoint import save_checkpoint
from src.model.layers import count_parameters
from src.ndarr import ops
from src.ndarr.rng import RngStream, derive_seed
from src.ndarr.tensor import Tensor, no_grad
from src.training.losses import LossWeights, cls_loss, depth_loss, gate_loss, total_loss
from src.training.optim import Adam

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ["epoch", "lr", "L_c", "L_d", "L_g", "acc", "val_eer", "val_loss"]


# ============================================
# Inputs
# ============================================

def input_frame_count(n0: int, diffnorm: str) -> int:
    if diffnorm == "dn":
        return 2 * (n0 - 2)
    if diffnorm == "adjacent":
        return n0 - 1
    if diffnorm == "none":
        return n0
    raise ConfigError(f"Unknown diffnorm variant '{diffnorm}'")


def prepare_input(sample: LabeledSample, diffnorm: str = "dn", standardize_input: bool = False) -> np.ndarray:
    """Network input [N, C, H, W] for one capture."""
    aligned = align_frames(sample.sequence).astype(np.float64)
    n0 = aligned.shape[0]
    if diffnorm == "dn":
        x = apply_diffnorm(aligned, build_diff_matrix(n0))
    elif diffnorm == "adjacent":
        x = apply_diffnorm(aligned, build_adjacent_matrix(n0))
    elif diffnorm == "none":
        x = aligned
    else:
        raise ConfigError(f"Unknown diffnorm variant '{diffnorm}'")
    if standardize_input:
        x = standardize(x)
    return x.astype(np.float32)


def build_model(config: TrainConfig, height: int, width: int) -> AtrFasModel:
    model = AtrFasModel(
        n_frames=input_frame_count(config.n0, config.diffnorm),
        height=height,
        width=width,
        seed=derive_seed(config.seed, "model"),
        num_experts=config.num_experts,
        stem_channels=config.stem_channels,
    )
    if config.tie_experts:
        tie_experts(model)
    return model


def effective_weights(config: TrainConfig) -> LossWeights:
    """Gate supervision only applies to modes with a type gate."""
    lambda_g = config.lambda_g if config.mode in GATED_MODES else 0.0
    return LossWeights(config.lambda_c, config.lambda_d, lambda_g)


def parameter_lr_scales(model: AtrFasModel, config: TrainConfig) -> list[float]:
    """Per-parameter step multipliers, in ``model.parameters()`` order."""
    gate = set(gate_parameter_names(model)) if config.mode in GATED_MODES else set()
    return [config.gate_lr_scale if name in gate else 1.0 for name, _ in model.named_parameters()]


# ============================================
# Losses over a batch
# ============================================

@dataclass
class BatchResult:
    loss: Tensor
    parts: dict[str, float]
    probs: np.ndarray


def batch_loss(
    model: AtrFasModel,
    samples: list[LabeledSample],
    inputs: dict[str, np.ndarray],
    config: TrainConfig,
    weights: LossWeights,
    rg_logits: Optional[np.ndarray] = None,
) -> BatchResult:
    outputs = [forward(model, Tensor(inputs[s.id]), config.mode, rg_logits) for s in samples]

    probs = ops.stack([o.prob for o in outputs])
    l_c = cls_loss(probs, np.array([s.cls_label for s in samples]))
    l_d = depth_loss(
        ops.stack([o.depth for o in outputs]),
        np.stack([s.depth_label for s in samples]),
        config.depth_loss,
    )
    if config.mode in GATED_MODES:
        l_g = gate_loss(ops.stack([o.g for o in outputs]), np.stack([s.gate_label for s in samples]))
    else:
        l_g = Tensor(0.0)

    loss = total_loss(l_c, l_d, l_g, weights)
    parts = {"L_c": l_c.item(), "L_d": l_d.item(), "L_g": l_g.item(), "L_total": loss.item()}
    return BatchResult(loss=loss, parts=parts, probs=probs.numpy())


# ============================================
# Prediction
# ============================================

@dataclass
class Predictions:
    scores: ScoreSet
    gate_argmax: np.ndarray   # -1 where the mode has no type gate
    attack_types: list[str]


def predict(
    model: AtrFasModel,
    samples: list[LabeledSample],
    mode: str,
    diffnorm: str = "dn",
    standardize_input: bool = False,
) -> Predictions:
    scores, gates = [], []
    with no_grad():
        for s in samples:
            out = forward(model, Tensor(prepare_input(s, diffnorm, standardize_input)), mode)
            scores.append(out.prob.item())
            gates.append(int(np.argmax(out.g.data)) if out.g is not None and mode in GATED_MODES else -1)
    return Predictions(
        scores=ScoreSet(np.array(scores), np.array([s.cls_label for s in samples])),
        gate_argmax=np.array(gates, dtype=int),
        attack_types=[s.attack_type for s in samples],
    )


def gate_accuracy(predictions: Predictions) -> float:
    """Fraction of spoof samples whose type-gate argmax names their attack type."""
    hits = [
        g == ATTACK_TYPES.index(t)
        for g, t in zip(predictions.gate_argmax, predictions.attack_types)
        if t != "none"
    ]
    if not hits:
        return float("nan")
    return float(np.mean(hits))


# ============================================
# Training loop
# ============================================

@dataclass
class TrainResult:
    model: AtrFasModel
    history: pd.DataFrame
    best_val_eer: Optional[float]
    dev_threshold: float
    checkpoint_path: Optional[str] = None
    val_ids: list[str] = field(default_factory=list)


def validation_split(samples: list[LabeledSample], fraction: float, seed: int) -> tuple[list, list]:
    """Seeded split stratified by attack type; groups of one stay in training."""
    if fraction <= 0:
        return list(samples), []
    rng = RngStream(derive_seed(seed, "validation"))
    val_ids: set[str] = set()
    for attack_type in ("none",) + ATTACK_TYPES:
        group = [s for s in samples if s.attack_type == attack_type]
        if len(group) < 2:
            continue
        take = max(1, int(round(fraction * len(group))))
        order = rng.permutation(len(group))
        val_ids.update(group[i].id for i in order[:take])
    train = [s for s in samples if s.id not in val_ids]
    val = [s for s in samples if s.id in val_ids]
    return train, val


def validation_pass(
    model: AtrFasModel,
    samples: list[LabeledSample],
    inputs: dict[str, np.ndarray],
    config: TrainConfig,
    weights: LossWeights,
) -> tuple[ScoreSet, float]:
    """Scores and mean weighted loss on the held-out slice; random gates sit at uniform."""
    rg = np.zeros(model.num_experts) if config.mode in RANDOM_GATE_MODES else None
    probs, total = [], 0.0
    with no_grad():
        for start in range(0, len(samples), config.batch_size):
            batch = samples[start:start + config.batch_size]
            result = batch_loss(model, batch, inputs, config, weights, rg)
            probs.append(result.probs)
            total += result.parts["L_total"] * len(batch)
    scores = ScoreSet(np.concatenate(probs), np.array([s.cls_label for s in samples]))
    return scores, total / len(samples)


def improves(val_eer: float, val_loss: float, best: Optional[tuple[float, float]]) -> bool:
    """Lower validation EER wins; on equal EER the lower validation loss does."""
    return best is None or (val_eer, val_loss) < best


def _check_grads(model: AtrFasModel) -> None:
    for name, p in model.named_parameters():
        if p.grad is not None and not np.isfinite(p.grad).all():
            raise NumericError(f"non-finite gradient in {name}")


def _has_both_classes(samples: list[LabeledSample]) -> bool:
    labels = {s.cls_label for s in samples}
    return labels == {0, 1}


def train(
    samples: list[LabeledSample],
    config: TrainConfig,
    out_dir: Optional[str] = None,
) -> TrainResult:
    """Train a fresh model on ``samples``.

    Writes ``model.ckpt`` (best validation EER, ties to the lower validation
    loss; last epoch without a validation slice) and a tab-separated
    ``train.log`` with one line per epoch when ``out_dir`` is given.
    """
    config.validate()
    if not samples:
        raise ConfigError("Training set is empty")
    if not _has_both_classes(samples):
        raise ConfigError("Training set must contain live and spoof samples")

    height, width = samples[0].sequence.frames.shape[2:]
    train_set, val_set = validation_split(samples, config.val_fraction, config.seed)
    if not _has_both_classes(val_set):
        if val_set:
            logger.warning("  ⚠️ Validation slice lacks a class; selecting the last epoch")
            train_set, val_set = list(samples), []

    model = build_model(config, height, width)
    weights = effective_weights(config)
    optimizer = Adam(model.parameters(), lr=config.lr, lr_scales=parameter_lr_scales(model, config))
    order = RngStream(derive_seed(config.seed, "shuffle"))
    inputs = {s.id: prepare_input(s, config.diffnorm, config.input_standardize) for s in train_set + val_set}

    logger.info(
        f"🏋️ Training {config.mode} ({count_parameters(model):,} parameters) on {len(train_set)} samples, "
        f"{len(val_set)} held out, {config.epochs} epochs"
    )

    log_lines: list[str] = []
    history: list[dict] = []
    best_state = model.state_dict()
    best: Optional[tuple[float, float]] = None
    dev_threshold = 0.5

    for epoch in range(config.epochs):
        lr = config.lr * config.decay ** epoch
        optimizer.lr = lr
        perm = order.permutation(len(train_set))
        totals = {"L_c": 0.0, "L_d": 0.0, "L_g": 0.0}
        correct = 0

        for start in range(0, len(perm), config.batch_size):
            batch = [train_set[i] for i in perm[start:start + config.batch_size]]
            rg = model.random_gate.normal(shape=model.num_experts) if config.mode in RANDOM_GATE_MODES else None
            optimizer.zero_grad()
            result = batch_loss(model, batch, inputs, config, weights, rg)
            result.loss.backward()
            _check_grads(model)
            optimizer.step()

            for key in totals:
                totals[key] += result.parts[key] * len(batch)
            labels = np.array([s.cls_label for s in batch])
            correct += int(((result.probs >= 0.5).astype(int) == labels).sum())

        n = len(train_set)
        row = {"epoch": epoch + 1, "lr": lr, **{k: v / n for k, v in totals.items()}, "acc": correct / n}

        val_eer = val_loss = float("nan")
        if val_set:
            val_scores, val_loss = validation_pass(model, val_set, inputs, config, weights)
            val_eer, val_threshold = eer(val_scores)
            if improves(val_eer, val_loss, best):
                best = (val_eer, val_loss)
                dev_threshold = val_threshold
                best_state = model.state_dict()
        else:
            best_state = model.state_dict()
        row["val_eer"] = val_eer
        row["val_loss"] = val_loss
        history.append(row)
        log_lines.append(
            f"{row['epoch']}\t{lr:.6g}\t{row['L_c']:.6f}\t{row['L_d']:.6f}\t{row['L_g']:.6f}"
            f"\t{row['acc']:.4f}\t{val_eer:.4f}"
        )
        logger.info(
            f"  📉 Epoch {row['epoch']}/{config.epochs}: lr={lr:.3g} L_c={row['L_c']:.4f} "
            f"L_d={row['L_d']:.4f} L_g={row['L_g']:.4f} acc={row['acc']:.3f} val_eer={val_eer:.4f}"
        )
        if not all(math.isfinite(row[k]) for k in ("L_c", "L_d", "L_g")):
            raise NumericError(f"non-finite loss in epoch {row['epoch']}")

    model.load_state_dict(best_state)
    best_eer = best[0] if best is not None else None
    ckpt_path = None
    if out_dir:
        ckpt_path = save_checkpoint(
            model,
            os.path.join(out_dir, CHECKPOINT_FILE),
            {
                "mode": config.mode,
                "seed": derive_seed(config.seed, "model"),
                "n0": config.n0,
                "diffnorm": config.diffnorm,
                "input_standardize": config.input_standardize,
                "dev_threshold": dev_threshold,
                "best_val_eer": best_eer,
            },
        )
        with open(os.path.join(out_dir, TRAIN_LOG_FILE), "w") as f:
            f.write("".join(line + "\n" for line in log_lines))
        logger.info(f"  💾 Checkpoint written to {ckpt_path}")

    return TrainResult(
        model=model,
        history=pd.DataFrame(history, columns=HISTORY_COLUMNS),
        best_val_eer=best_eer,
        dev_threshold=dev_threshold,
        checkpoint_path=ckpt_path,
        val_ids=[s.id for s in val_set],
    )
