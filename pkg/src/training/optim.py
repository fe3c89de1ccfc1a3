"""
Adam with bias correction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from src.config import ADAM_BETAS, ADAM_EPS
from src.errors import DimensionError, ParameterError
from src.ndarr.tensor import Tensor


@dataclass
class AdamState:
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def zeros(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls(
            step=0,
            m=[np.zeros(p.shape) for p in params],
            v=[np.zeros(p.shape) for p in params],
        )


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[Optional[np.ndarray]],
    state: AdamState,
    lr: float,
    beta1: float = ADAM_BETAS[0],
    beta2: float = ADAM_BETAS[1],
    eps: float = ADAM_EPS,
    lr_scales: Optional[Sequence[float]] = None,
) -> AdamState:
    """One bias-corrected Adam update; moments are kept in float64.

    ``lr_scales`` multiplies the step size per parameter (default 1 each).
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError("params, grads and optimizer state must line up")
    if lr_scales is None:
        lr_scales = [1.0] * len(params)
    elif len(lr_scales) != len(params):
        raise DimensionError(f"{len(lr_scales)} lr scales for {len(params)} parameters")
    state.step += 1
    correct1 = 1.0 - beta1 ** state.step
    correct2 = 1.0 - beta2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros(p.shape)
        g = np.asarray(g, dtype=np.float64)
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g
        update = lr * lr_scales[i] * (state.m[i] / correct1) / (np.sqrt(state.v[i] / correct2) + eps)
        p.data = (p.data - update).astype(p.data.dtype)
    return state


class Adam:
    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float,
        betas: tuple[float, float] = ADAM_BETAS,
        eps: float = ADAM_EPS,
        lr_scales: Optional[Sequence[float]] = None,
    ):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.lr_scales = [1.0] * len(self.params) if lr_scales is None else [float(s) for s in lr_scales]
        if len(self.lr_scales) != len(self.params):
            raise DimensionError(f"{len(self.lr_scales)} lr scales for {len(self.params)} parameters")
        if min(self.lr_scales, default=1.0) <= 0:
            raise ParameterError("lr scales must be positive")
        self.state = AdamState.zeros(self.params)

    def step(self) -> None:
        adam_step(
            self.params, [p.grad for p in self.params], self.state,
            self.lr, *self.betas, self.eps, lr_scales=self.lr_scales,
        )

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
