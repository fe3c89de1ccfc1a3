"""
Training objectives: gate, depth and classification losses and their
weighted total, plus gate-target construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from src.config import ATTACK_TYPES, LOSS_WEIGHTS, PROB_CLAMP
from src.errors import DimensionError, LabelError, ParameterError
from src.ndarr import ops
from src.ndarr.tensor import Tensor


@dataclass(frozen=True)
class LossWeights:
    lambda_c: float = LOSS_WEIGHTS["c"]
    lambda_d: float = LOSS_WEIGHTS["d"]
    lambda_g: float = LOSS_WEIGHTS["g"]

    def __post_init__(self):
        weights = (self.lambda_c, self.lambda_d, self.lambda_g)
        if min(weights) < 0:
            raise ParameterError(f"Loss weights must be non-negative, got {weights}")
        if max(weights) <= 0:
            raise ParameterError("At least one loss weight must be positive")


def make_gate_target(cls_label: int, attack_type: str, num_experts: int) -> np.ndarray:
    """One-hot at the attack-type index for spoofs, uniform 1/M for live faces."""
    if cls_label not in (0, 1):
        raise LabelError(f"cls_label must be 0 or 1, got {cls_label}")
    if cls_label == 0:
        if attack_type != "none":
            raise LabelError(f"live sample carries attack type '{attack_type}'")
        return np.full(num_experts, 1.0 / num_experts)
    if attack_type == "none":
        raise LabelError("spoof sample has attack type 'none'")
    if attack_type not in ATTACK_TYPES:
        raise LabelError(f"Unknown attack type '{attack_type}'")
    index = ATTACK_TYPES.index(attack_type)
    if index >= num_experts:
        raise LabelError(f"attack type '{attack_type}' has no expert among {num_experts}")
    target = np.zeros(num_experts)
    target[index] = 1.0
    return target


def _clamped(p: Tensor) -> Tensor:
    return ops.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def _bce(p: Tensor, y: np.ndarray) -> Tensor:
    """Mean of −[y log p + (1−y) log(1−p)] over every element."""
    p = _clamped(p)
    target = Tensor(y)
    per_elem = target * ops.log(p) + (1.0 - target) * ops.log(1.0 - p)
    return -ops.mean(per_elem)


def gate_loss(g_logits: Tensor, targets: np.ndarray) -> Tensor:
    """Soft-target cross-entropy, averaged over the batch."""
    targets = np.asarray(targets, dtype=np.float64)
    if g_logits.ndim != 2 or targets.shape != g_logits.shape:
        raise DimensionError(f"gate logits {g_logits.shape} and targets {targets.shape} must both be (n, M)")
    if not np.allclose(targets.sum(axis=1), 1.0, atol=1e-6, rtol=0):
        raise LabelError("gate targets must sum to 1 per row")
    per_row = ops.sum(Tensor(targets) * ops.log_softmax(g_logits, axis=1), axes=[1])
    return -ops.mean(per_row)


def depth_loss(pred: Tensor, target: np.ndarray, kind: str = "bce") -> Tensor:
    """Depth supervision on fused maps [n, H', W'].

    ``bce``: per-pixel soft-target binary cross-entropy.
    ``softmax2d``: cross-entropy between the target normalised into a
    spatial distribution and a softmax over the predicted depth logits.
    """
    target = np.asarray(target, dtype=np.float64)
    if target.shape != pred.shape:
        raise DimensionError(f"depth prediction {pred.shape} vs label {target.shape}")
    if target.min() < 0 or target.max() > 1:
        raise LabelError("depth labels must lie in [0, 1]")
    if kind == "bce":
        return _bce(pred, target)
    if kind != "softmax2d":
        raise ParameterError(f"Unknown depth loss '{kind}'")

    n = pred.shape[0]
    p = _clamped(pred)
    logits = ops.reshape(ops.log(p) - ops.log(1.0 - p), (n, -1))
    flat = target.reshape(n, -1)
    mass = flat.sum(axis=1, keepdims=True)
    dist = np.where(mass > 0, flat / np.where(mass > 0, mass, 1.0), 1.0 / flat.shape[1])
    per_row = ops.sum(Tensor(dist) * ops.log_softmax(logits, axis=1), axes=[1])
    return -ops.mean(per_row)


def cls_loss(c: Tensor, labels: np.ndarray) -> Tensor:
    labels = np.asarray(labels, dtype=np.float64).reshape(c.shape)
    return _bce(c, labels)


def total_loss(l_c: Tensor, l_d: Tensor, l_g: Tensor, weights: LossWeights) -> Tensor:
    return weights.lambda_c * l_c + weights.lambda_d * l_d + weights.lambda_g * l_g
