"""
Finite-difference gradient checks for the tensor engine.
"""

from __future__ import annotations

import logging
from typing import Callable, Sequence

import numpy as np

from src.ndarr import ops
from src.ndarr.rng import RngStream
from src.ndarr.tensor import Tensor, precision

logger = logging.getLogger(__name__)


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = float(np.linalg.norm(analytic - numeric))
    scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), 1e-8)
    return diff / scale


def grad_check(
    build_graph: Callable[..., Tensor],
    shapes: Sequence[Sequence[int]],
    seed: int,
    eps: float = 1e-3,
    inputs: Sequence[np.ndarray] | None = None,
) -> float:
    """Compare analytic gradients of ``build_graph`` against central differences.

    ``build_graph`` takes one tensor per entry of ``shapes`` and returns a
    tensor of any shape; it is contracted with a fixed random projection so
    ops whose plain sum has zero gradient (softmax) are still exercised.
    Returns the largest per-input ``‖a − n‖ / max(‖a‖, ‖n‖, 1e-8)``.
    """
    rng = RngStream(seed)
    with precision(np.float64):
        values = (
            [np.array(v, dtype=np.float64) for v in inputs]
            if inputs is not None
            else [rng.normal(shape=tuple(s)) for s in shapes]
        )
        first = build_graph(*(Tensor(v) for v in values))
        projection = rng.normal(shape=first.shape)

        def scalar(arrays: list[np.ndarray]) -> float:
            out = build_graph(*(Tensor(a) for a in arrays))
            return float(np.sum(out.data * projection, dtype=np.float64))

        leaves = [Tensor(v, requires_grad=True) for v in values]
        loss = ops.sum(build_graph(*leaves) * Tensor(projection))
        loss.backward()

        worst = 0.0
        for idx, leaf in enumerate(leaves):
            numeric = np.zeros_like(values[idx])
            flat = values[idx].reshape(-1)
            num_flat = numeric.reshape(-1)
            for j in range(flat.size):
                original = flat[j]
                flat[j] = original + eps
                plus = scalar(values)
                flat[j] = original - eps
                minus = scalar(values)
                flat[j] = original
                num_flat[j] = (plus - minus) / (2 * eps)
            analytic = leaf.grad if leaf.grad is not None else np.zeros_like(numeric)
            err = _relative_error(analytic, numeric)
            logger.debug(f"grad_check input {idx} shape {leaf.shape}: rel err {err:.2e}")
            worst = max(worst, err)
    return worst
