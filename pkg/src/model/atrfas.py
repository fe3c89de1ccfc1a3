"""
Gated Multi-Expert Depth Network — Flash Anti-Spoofing Model.
Stem with position embeddings, M ResUNet depth experts, type gate, attention
gate, expert mixture, frame fusion and the classification head.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.config import (
    ABLATION_MODES,
    ATTENTION_WIDTHS,
    DEPTH_DOWNSCALE,
    EXPERT_WIDTHS,
    GATE_WIDTHS,
    HEAD_WIDTHS,
    NUM_EXPERTS,
    POS_EMBED_STD,
    STEM_CHANNELS,
)
from src.errors import DimensionError, ParameterError
from src.model.layers import Conv2d, Linear, Module, parameter
from src.model.resunet import ResUNet
from src.ndarr import ops
from src.ndarr.rng import RngStream, derive_seed
from src.ndarr.tensor import Tensor

logger = logging.getLogger(__name__)

SINGLE_EXPERT_MODES = ("woMEMM", "woMEMM_ATT")
ATTENTION_MODES = ("woMEMM_ATT", "ATT", "RG_ATT", "DGM")
TYPE_GATE_MODES = ("TG", "DGM")
RANDOM_GATE_MODES = ("RG", "RG_ATT")


def _strided(size: int, times: int) -> int:
    """Spatial extent after ``times`` 3×3 stride-2 convolutions with padding 1."""
    for _ in range(times):
        size = (size - 1) // 2 + 1
    return size


class AtrFasModel(Module):
    def __init__(
        self,
        n_frames: int,
        height: int,
        width: int,
        seed: int,
        in_channels: int = 1,
        num_experts: int = NUM_EXPERTS,
        stem_channels: int = STEM_CHANNELS,
    ):
        if height % DEPTH_DOWNSCALE or width % DEPTH_DOWNSCALE:
            raise DimensionError(f"input {height}x{width} must be divisible by {DEPTH_DOWNSCALE}")
        if num_experts < 1 or n_frames < 1:
            raise ParameterError("num_experts and n_frames must be >= 1")
        rng = RngStream(seed)
        self.n_frames = n_frames
        self.in_channels = in_channels
        self.num_experts = num_experts
        self.stem_channels = stem_channels
        self.height, self.width = height, width
        self.depth_size = (height // DEPTH_DOWNSCALE, width // DEPTH_DOWNSCALE)
        h, w = self.depth_size

        # stem + position embeddings
        self.stem1 = Conv2d(in_channels, stem_channels // 2, rng.child("stem1"), stride=2)
        self.stem2 = Conv2d(stem_channels // 2, stem_channels, rng.child("stem2"), stride=2)
        self.pos_embed = parameter(rng.child("pos_embed").normal(0.0, POS_EMBED_STD, shape=(stem_channels, h, w)))

        self.experts = [
            ResUNet(stem_channels, EXPERT_WIDTHS, rng.child("expert", i), sigmoid=True)
            for i in range(num_experts)
        ]

        # type gate over the channel-concatenated sequence; features keep their layout
        g0, g1, g2 = GATE_WIDTHS
        self.gate1 = Conv2d(n_frames * in_channels, g0, rng.child("gate1"), stride=2)
        self.gate2 = Conv2d(g0, g1, rng.child("gate2"), stride=2)
        self.gate3 = Conv2d(g1, g2, rng.child("gate3"), stride=2)
        self.gate_fc1 = Linear(g2 * _strided(height, 3) * _strided(width, 3), g2, rng.child("gate_fc1"))
        self.gate_fc2 = Linear(g2, num_experts, rng.child("gate_fc2"))

        # attention gate, frames as batch
        a0 = ATTENTION_WIDTHS[0]
        self.attn1 = Conv2d(in_channels, a0 // 2, rng.child("attn1"), stride=2)
        self.attn2 = Conv2d(a0 // 2, a0, rng.child("attn2"), stride=2)
        self.attn_net = ResUNet(a0, ATTENTION_WIDTHS, rng.child("attn_net"), sigmoid=False)

        # concatenation merge, initialised as an average
        self.merge = Conv2d(num_experts, 1, rng.child("merge"), kernel_size=1)
        self.merge.weight.data[...] = 1.0 / num_experts

        c0, c1, c2 = HEAD_WIDTHS
        self.head1 = Conv2d(1, c0, rng.child("head1"), stride=2)
        self.head2 = Conv2d(c0, c1, rng.child("head2"), stride=2)
        self.head3 = Conv2d(c1, c2, rng.child("head3"), stride=2)
        self.head_fc = Linear(c2 * _strided(h, 3) * _strided(w, 3), 1, rng.child("head_fc"))

        self.random_gate = RngStream(derive_seed(seed, "random_gate"))

    def config_echo(self) -> dict:
        return {
            "n_frames": self.n_frames,
            "height": self.height,
            "width": self.width,
            "in_channels": self.in_channels,
            "num_experts": self.num_experts,
            "stem_channels": self.stem_channels,
        }


@dataclass
class ForwardOutputs:
    g: Optional[Tensor]        # [M] gate logits (type or random gate)
    A: Tensor                  # [N, H', W'] normalised frame attention
    frame_depths: Tensor       # X′ [N, H', W']
    depth: Tensor              # X̂ [H', W']
    prob: Tensor               # c, scalar spoof probability


def tie_experts(model: AtrFasModel) -> None:
    """Copy expert 1's values into every expert; parameters stay separate tensors."""
    reference = model.experts[0].state_dict()
    for expert in model.experts[1:]:
        expert.load_state_dict(reference)


# ============================================
# Sub-networks
# ============================================

def stem_forward(model: AtrFasModel, X: Tensor) -> Tensor:
    """X⁰ = Stem(X) + P, with P broadcast over the frame axis."""
    n, _, h, w = X.shape
    if h % DEPTH_DOWNSCALE or w % DEPTH_DOWNSCALE:
        raise DimensionError(f"stem input {h}x{w} must be divisible by {DEPTH_DOWNSCALE}")
    x = ops.relu(model.stem1(X))
    x = ops.relu(model.stem2(x))
    if x.shape[1:] != model.pos_embed.shape:
        raise DimensionError(f"stem output {x.shape[1:]} does not match position embedding {model.pos_embed.shape}")
    return x + ops.expand(model.pos_embed, x.shape)


def expert_forward(model: AtrFasModel, i: int, X0: Tensor) -> Tensor:
    """Output of expert ``i`` (1-based), [N, 1, H′, W′] in (0, 1)."""
    if not 1 <= i <= model.num_experts:
        raise ParameterError(f"expert index {i} outside 1..{model.num_experts}")
    return model.experts[i - 1](X0)


def gate_parameter_names(model: AtrFasModel) -> list[str]:
    return [name for name, _ in model.named_parameters() if name.startswith("gate")]


def type_gate(model: AtrFasModel, X: Tensor) -> Tensor:
    """M raw logits for the whole sequence.

    The stack is rescaled to zero mean and unit variance first (statistics
    are constants), so the gate sees surface shape rather than flash energy.
    """
    n, c, h, w = X.shape
    stats = X.data.astype(np.float64)
    x = (X - float(stats.mean())) * float(1.0 / (stats.std() + 1e-6))
    x = ops.reshape(x, (1, n * c, h, w))
    x = ops.relu(model.gate1(x))
    x = ops.relu(model.gate2(x))
    x = ops.relu(model.gate3(x))
    hidden = ops.relu(model.gate_fc1(ops.reshape(x, (1, -1))))
    return ops.reshape(model.gate_fc2(hidden), (model.num_experts,))


def attention_gate(model: AtrFasModel, X: Tensor) -> Tensor:
    """One raw attention map per frame, [N, H′, W′]."""
    x = ops.relu(model.attn1(X))
    x = ops.relu(model.attn2(x))
    maps = model.attn_net(x)
    n, _, h, w = maps.shape
    return ops.reshape(maps, (n, h, w))


def mix_experts(X_bar: Tensor, g: Tensor) -> Tensor:
    """X′ = Σ_m softmax(g)_m · X̄[m]."""
    if g.ndim != 1 or X_bar.shape[0] != g.shape[0]:
        raise DimensionError(f"{X_bar.shape[0]} expert maps but gate logits of shape {g.shape}")
    weights = ops.reshape(ops.softmax(g, axis=0), (g.shape[0],) + (1,) * (X_bar.ndim - 1))
    return ops.sum(ops.expand(weights, X_bar.shape) * X_bar, axes=[0])


def normalize_attention(A_raw: Tensor) -> Tensor:
    """Per-pixel softmax across frames."""
    return ops.softmax(A_raw, axis=0)


def fuse_frames(X_prime: Tensor, A_raw: Tensor) -> Tensor:
    """X̂[p] = Σ_n A[n,p]·X′[n,p] with A = softmax over frames of A_raw."""
    if X_prime.shape != A_raw.shape:
        raise DimensionError(f"frame depths {X_prime.shape} vs attention {A_raw.shape}")
    return ops.sum(normalize_attention(A_raw) * X_prime, axes=[0])


def classify(model: AtrFasModel, depth: Tensor) -> Tensor:
    """Spoof probability from the fused depth map."""
    h, w = depth.shape
    x = ops.reshape(depth, (1, 1, h, w))
    x = ops.relu(model.head1(x))
    x = ops.relu(model.head2(x))
    x = ops.relu(model.head3(x))
    logit = model.head_fc(ops.reshape(x, (1, -1)))
    return ops.reshape(ops.sigmoid(logit), ())


# ============================================
# Full pipeline
# ============================================

def forward(
    model: AtrFasModel,
    X: Tensor,
    mode: str = "DGM",
    rg_logits: Optional[np.ndarray] = None,
) -> ForwardOutputs:
    """Run one differential-frame stack [N, C, H, W] through the mode's wiring.

    woMEMM*: expert 1 only. Avg / Sum / Cat: unweighted mean, sum or learned
    1×1 merge of the experts. RG*: softmax of random logits. TG / DGM: type
    gate. Modes with attention fuse frames through the attention gate; the
    rest take the frame mean.
    """
    if mode not in ABLATION_MODES:
        raise ParameterError(f"Unknown mode '{mode}' (expected one of {', '.join(ABLATION_MODES)})")
    if X.ndim != 4:
        raise DimensionError(f"forward expects [N,C,H,W], got {X.shape}")
    n = X.shape[0]

    X0 = stem_forward(model, X)
    n_experts = 1 if mode in SINGLE_EXPERT_MODES else model.num_experts
    maps = [expert_forward(model, i, X0) for i in range(1, n_experts + 1)]
    h, w = maps[0].shape[2:]
    X_bar = ops.stack([ops.reshape(m, (n, h, w)) for m in maps], axis=0)

    g = None
    if mode in SINGLE_EXPERT_MODES:
        X_prime = ops.reshape(X_bar, (n, h, w))
    elif mode in ("Avg", "ATT"):
        X_prime = ops.mean(X_bar, axes=[0])
    elif mode == "Sum":
        X_prime = ops.sum(X_bar, axes=[0])
    elif mode == "Cat":
        merged = model.merge(ops.transpose(X_bar, (1, 0, 2, 3)))
        X_prime = ops.reshape(merged, (n, h, w))
    elif mode in RANDOM_GATE_MODES:
        logits = rg_logits if rg_logits is not None else model.random_gate.normal(shape=model.num_experts)
        g = Tensor(np.asarray(logits, dtype=np.float64).reshape(model.num_experts))
        X_prime = mix_experts(X_bar, g)
    else:
        g = type_gate(model, X)
        X_prime = mix_experts(X_bar, g)

    if mode in ATTENTION_MODES:
        A = normalize_attention(attention_gate(model, X))
    else:
        A = Tensor(np.full((n, h, w), 1.0 / n))
    depth = ops.sum(A * X_prime, axes=[0])

    return ForwardOutputs(g=g, A=A, frame_depths=X_prime, depth=depth, prob=classify(model, depth))
