"""
Biometric Error Rates — FAR / FRR / EER / HTER.
Decision rule everywhere: a sample is accepted as live when its spoof
score is below the threshold.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from src.errors import DimensionError, LabelError, MetricError

logger = logging.getLogger(__name__)

BOUNDARY_MARGIN = 1e-3


@dataclass
class ScoreSet:
    scores: np.ndarray    # spoof probabilities
    labels: np.ndarray    # 0 live, 1 spoof

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        self.labels = np.asarray(self.labels).reshape(-1).astype(int)
        if self.scores.shape != self.labels.shape:
            raise DimensionError(f"{self.scores.size} scores but {self.labels.size} labels")
        if not np.isin(self.labels, (0, 1)).all():
            raise LabelError("labels must be 0 (live) or 1 (spoof)")

    @property
    def live(self) -> np.ndarray:
        return self.scores[self.labels == 0]

    @property
    def spoof(self) -> np.ndarray:
        return self.scores[self.labels == 1]

    def require_both_classes(self) -> None:
        if self.live.size == 0 or self.spoof.size == 0:
            raise MetricError(
                f"need live and spoof samples, got {self.live.size} live / {self.spoof.size} spoof"
            )


def far_frr(s: ScoreSet, threshold: float) -> tuple[float, float]:
    """far = spoofs scored below ``threshold``; frr = lives scored at or above it."""
    s.require_both_classes()
    far = float(np.mean(s.spoof < threshold))
    frr = float(np.mean(s.live >= threshold))
    return far, frr


def candidate_thresholds(s: ScoreSet) -> np.ndarray:
    """Distinct scores, their midpoints, and one threshold beyond each end."""
    distinct = np.unique(s.scores)
    mids = (distinct[:-1] + distinct[1:]) / 2
    ends = [distinct[0] - BOUNDARY_MARGIN, distinct[-1] + BOUNDARY_MARGIN]
    return np.unique(np.concatenate([distinct, mids, ends]))


def _rates(s: ScoreSet, thresholds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    spoof = np.sort(s.spoof)
    live = np.sort(s.live)
    far = np.searchsorted(spoof, thresholds, side="left") / spoof.size
    frr = (live.size - np.searchsorted(live, thresholds, side="left")) / live.size
    return far, frr


def roc_curve(s: ScoreSet) -> pd.DataFrame:
    s.require_both_classes()
    thresholds = candidate_thresholds(s)
    far, frr = _rates(s, thresholds)
    return pd.DataFrame({"threshold": thresholds, "far": far, "frr": frr})


def eer(s: ScoreSet) -> tuple[float, float]:
    """Equal error rate and its threshold.

    FAR − FRR is non-decreasing over the candidate thresholds; the first
    candidate where it reaches zero wins (lowest threshold on ties),
    otherwise both rates are interpolated linearly across the sign change.
    """
    s.require_both_classes()
    thresholds = candidate_thresholds(s)
    far, frr = _rates(s, thresholds)
    diff = far - frr
    k = int(np.argmax(diff >= 0))
    if diff[k] == 0 or k == 0:
        return float(far[k]), float(thresholds[k])
    alpha = -diff[k - 1] / (diff[k] - diff[k - 1])
    rate = far[k - 1] + alpha * (far[k] - far[k - 1])
    threshold = thresholds[k - 1] + alpha * (thresholds[k] - thresholds[k - 1])
    return float(rate), float(threshold)


def hter(test: ScoreSet, threshold: float) -> float:
    """(FAR + FRR) / 2 on ``test`` at a threshold fixed on a development split."""
    far, frr = far_frr(test, threshold)
    return (far + frr) / 2


@dataclass
class EvalReport:
    eer: float
    eer_threshold: float
    hter: float
    far: float
    frr: float
    threshold: float                    # dev threshold used for HTER
    roc: pd.DataFrame = field(repr=False, default_factory=pd.DataFrame)
    folds: Optional[pd.DataFrame] = field(repr=False, default=None)

    def as_row(self) -> dict:
        return {
            "eer": self.eer,
            "hter": self.hter,
            "far": self.far,
            "frr": self.frr,
            "threshold": self.threshold,
        }


def evaluate(test: ScoreSet, dev_threshold: float) -> EvalReport:
    """EER on ``test`` plus FAR / FRR / HTER at the development threshold."""
    rate, rate_threshold = eer(test)
    far, frr = far_frr(test, dev_threshold)
    return EvalReport(
        eer=rate,
        eer_threshold=rate_threshold,
        hter=(far + frr) / 2,
        far=far,
        frr=frr,
        threshold=float(dev_threshold),
        roc=roc_curve(test),
    )


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise MetricError("no values to aggregate")
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std
