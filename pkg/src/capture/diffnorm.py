"""
Differential Normalization — Ambient Light Removal.
Aligns flash frames to a canonical face and subtracts frame pairs so that only
the flash-induced shading survives.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from src.errors import AlignmentError, DimensionError, LabelError, ParameterError
from src.ndarr.tensor import Tensor

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, Tensor]

# eye centres, nose tip, mouth corners; fractions of the output size (x, y)
CANONICAL_LANDMARKS = np.array([
    [0.35, 0.40],
    [0.65, 0.40],
    [0.50, 0.56],
    [0.38, 0.72],
    [0.62, 0.72],
])


def canonical_template(size: tuple[int, int]) -> np.ndarray:
    """5×2 canonical landmark template for an ``(H, W)`` output."""
    h, w = size
    return CANONICAL_LANDMARKS * np.array([w - 1, h - 1], dtype=np.float64)


@dataclass
class FlashSequence:
    """N₀ frames of one capture, ordered by flash intensity."""

    frames: np.ndarray                     # [N0, C, H, W]
    flash_levels: np.ndarray               # [N0], non-decreasing
    label: str = "live"                    # live | spoof
    attack_type: str = "none"              # none | print | replay | mask
    landmarks: Optional[np.ndarray] = None  # [N0, 5, 2] as (x, y)
    variant: str = "live"
    scenario: str = ""

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        self.flash_levels = np.asarray(self.flash_levels, dtype=np.float64)
        if self.frames.ndim != 4:
            raise DimensionError(f"frames must be [N0,C,H,W], got {self.frames.shape}")
        if self.flash_levels.shape != (self.frames.shape[0],):
            raise DimensionError(
                f"{self.frames.shape[0]} frames but {self.flash_levels.size} flash levels"
            )
        if np.any(np.diff(self.flash_levels) < 0):
            raise ParameterError("flash_levels must be sorted ascending")
        if self.label not in ("live", "spoof"):
            raise LabelError(f"Unknown label '{self.label}'")
        if (self.label == "live") != (self.attack_type == "none"):
            raise LabelError(f"label '{self.label}' is inconsistent with attack type '{self.attack_type}'")
        if self.landmarks is not None:
            self.landmarks = np.asarray(self.landmarks, dtype=np.float64)
            if self.landmarks.shape != (self.frames.shape[0], 5, 2):
                raise DimensionError(f"landmarks must be [N0,5,2], got {self.landmarks.shape}")

    @property
    def n0(self) -> int:
        return self.frames.shape[0]


# ============================================
# Differential matrices
# ============================================

@dataclass(frozen=True)
class DiffMatrix:
    n0: int
    entries: np.ndarray = field(repr=False)
    kind: str = "dn"

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def pairs(self) -> list[tuple[int, int]]:
        """(plus, minus) frame indices per row."""
        return [(int(np.argmax(row == 1)), int(np.argmax(row == -1))) for row in self.entries]


def _checked(n0: int, rows: list[tuple[int, int]], kind: str) -> DiffMatrix:
    entries = np.zeros((len(rows), n0), dtype=np.int8)
    for r, (plus, minus) in enumerate(rows):
        entries[r, plus] = 1
        entries[r, minus] = -1
    entries.setflags(write=False)
    return DiffMatrix(n0=n0, entries=entries, kind=kind)


def build_diff_matrix(n0: int) -> DiffMatrix:
    """The 2(N₀−2)×N₀ block matrix [1, −I, 0; 0, I, −1].

    The first N₀−2 rows subtract each intermediate frame from the weakest
    flash; the last N₀−2 rows subtract the strongest flash from each
    intermediate frame. No row pairs two adjacent intermediates.
    """
    if n0 < 3:
        raise ParameterError(f"n0 must be >= 3 (N = 2(n0-2) rows), got {n0}")
    inner = range(1, n0 - 1)
    rows = [(0, j) for j in inner] + [(j, n0 - 1) for j in inner]
    return _checked(n0, rows, "dn")


def build_adjacent_matrix(n0: int) -> DiffMatrix:
    """Consecutive-frame differences: rows (1,−1,0,…), (0,1,−1,…), …"""
    if n0 < 2:
        raise ParameterError(f"n0 must be >= 2 for consecutive differences, got {n0}")
    return _checked(n0, [(j, j + 1) for j in range(n0 - 1)], "adjacent")


def apply_diffnorm(aligned: ArrayLike, d: DiffMatrix) -> ArrayLike:
    """Output frame r = Σ_j D[r,j]·aligned[j], contracted over the frame axis only."""
    as_tensor = isinstance(aligned, Tensor)
    frames = aligned.data if as_tensor else np.asarray(aligned)
    if frames.shape[0] != d.n0:
        raise DimensionError(f"DiffMatrix expects {d.n0} frames, got {frames.shape[0]}")
    plus, minus = (np.array(idx) for idx in zip(*d.pairs))
    out = frames[plus] - frames[minus]
    return Tensor(out) if as_tensor else out


def standardize(frames: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Zero-mean, unit-variance rescaling of a whole frame stack."""
    frames = np.asarray(frames)
    mean = frames.mean(dtype=np.float64)
    std = frames.std(dtype=np.float64)
    return ((frames - mean) / (std + eps)).astype(frames.dtype)


# ============================================
# Alignment
# ============================================

@dataclass(frozen=True)
class Similarity:
    """x' = scale · R(angle) · x + translation."""

    scale: float
    angle: float
    translation: np.ndarray

    @property
    def rotation(self) -> np.ndarray:
        c, s = np.cos(self.angle), np.sin(self.angle)
        return np.array([[c, -s], [s, c]])

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * points @ self.rotation.T + self.translation

    def inverse(self) -> "Similarity":
        inv_scale = 1.0 / self.scale
        back = Similarity(inv_scale, -self.angle, np.zeros(2))
        return Similarity(inv_scale, -self.angle, -back.apply(self.translation[None, :])[0])


def fit_similarity(src: np.ndarray, dst: np.ndarray) -> Similarity:
    """Least-squares rotation, uniform scale and translation mapping ``src`` onto ``dst``."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise DimensionError(f"landmark sets must both be [K,2], got {src.shape} and {dst.shape}")

    mu_src, mu_dst = src.mean(axis=0), dst.mean(axis=0)
    src_c, dst_c = src - mu_src, dst - mu_dst
    spread = np.linalg.svd(src_c, compute_uv=False)
    if spread[0] < 1e-9:
        raise AlignmentError("landmarks are coincident")
    if spread[-1] < 1e-6 * spread[0]:
        raise AlignmentError("landmarks are collinear")

    cov = dst_c.T @ src_c / len(src)
    u, sig, vt = np.linalg.svd(cov)
    flip = np.diag([1.0, np.sign(np.linalg.det(u) * np.linalg.det(vt)) or 1.0])
    rot = u @ flip @ vt
    var_src = (src_c ** 2).sum() / len(src)
    scale = float(np.trace(np.diag(sig) @ flip) / var_src)
    translation = mu_dst - scale * rot @ mu_src
    return Similarity(scale, float(np.arctan2(rot[1, 0], rot[0, 0])), translation)


def _bilinear(image: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample [C,H,W] at float coordinates, clamping to the border."""
    _, h, w = image.shape
    xs = np.clip(xs, 0, w - 1)
    ys = np.clip(ys, 0, h - 1)
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx, fy = xs - x0, ys - y0
    top = image[:, y0, x0] * (1 - fx) + image[:, y0, x1] * fx
    bottom = image[:, y1, x0] * (1 - fx) + image[:, y1, x1] * fx
    return top * (1 - fy) + bottom * fy


def warp_frame(frame: np.ndarray, transform: Similarity, out_size: tuple[int, int]) -> np.ndarray:
    """Resample [C,H,W] so that ``transform`` maps source pixels to output pixels."""
    h, w = out_size
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    grid = np.stack([xs.ravel(), ys.ravel()], axis=1)
    src = transform.inverse().apply(grid)
    out = _bilinear(frame.astype(np.float64), src[:, 0], src[:, 1])
    return out.reshape(frame.shape[0], h, w)


def align_frames(
    seq: FlashSequence,
    canonical: Optional[np.ndarray] = None,
    out_size: Optional[tuple[int, int]] = None,
) -> np.ndarray:
    """Align every frame of ``seq`` to the canonical template.

    Without landmarks the frames must already be ``out_size`` and are
    returned unchanged (pass-through for pre-aligned captures).
    """
    out_size = tuple(out_size or seq.frames.shape[2:])
    if seq.landmarks is None:
        if tuple(seq.frames.shape[2:]) != out_size:
            raise AlignmentError(
                f"no landmarks and frames are {seq.frames.shape[2:]}, not {out_size}"
            )
        return seq.frames

    template = canonical_template(out_size) if canonical is None else np.asarray(canonical, dtype=np.float64)
    aligned = np.empty(seq.frames.shape[:2] + out_size, dtype=np.float64)
    for f in range(seq.n0):
        transform = fit_similarity(seq.landmarks[f], template)
        aligned[f] = warp_frame(seq.frames[f], transform, out_size)
    return aligned.astype(seq.frames.dtype, copy=False)
