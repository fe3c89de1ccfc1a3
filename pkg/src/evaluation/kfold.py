"""
K-Fold Cross-Validation — stratified folds, one fresh model per fold.
"""

from __future__ import annotations

import asyncio
import dataclasses
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from src.config import ATTACK_TYPES, TrainConfig
from src.errors import ParameterError, StratificationError
from src.capture.synthgen import LabeledSample
from src.evaluation.metrics import EvalReport, evaluate, mean_std
from src.ndarr.rng import RngStream, derive_seed
from src.training.trainer import predict, train

logger = logging.getLogger(__name__)

FOLD_COLUMNS = ["fold", "eer", "hter", "far", "frr", "threshold"]


def assign_folds(samples: list[LabeledSample], k: int, seed: int) -> np.ndarray:
    """Fold index per sample, stratified by class and attack type.

    Each stratum is permuted by its own seeded stream and dealt round-robin,
    continuing where the previous stratum stopped.
    """
    if k < 2:
        raise ParameterError(f"k must be >= 2, got {k}")
    folds = np.full(len(samples), -1, dtype=int)
    offset = 0
    for attack_type in ("none",) + ATTACK_TYPES:
        members = [i for i, s in enumerate(samples) if s.attack_type == attack_type]
        if not members:
            continue
        order = RngStream(derive_seed(seed, "folds", attack_type)).permutation(len(members))
        for pos, j in enumerate(order):
            folds[members[j]] = (offset + pos) % k
        offset += len(members)

    for f in range(k):
        labels = {samples[i].cls_label for i in np.flatnonzero(folds == f)}
        if labels != {0, 1}:
            raise StratificationError(f"fold {f} of {k} lacks a class (has {sorted(labels)})")
    return folds


@dataclass
class KFoldReport:
    folds: pd.DataFrame
    eer: tuple[float, float]     # mean, std
    hter: tuple[float, float]
    reports: list[EvalReport]


def _run_fold(samples: list[LabeledSample], folds: np.ndarray, f: int, config: TrainConfig) -> EvalReport:
    train_set = [s for s, g in zip(samples, folds) if g != f]
    test_set = [s for s, g in zip(samples, folds) if g == f]
    fold_config = dataclasses.replace(config, seed=derive_seed(config.seed, "fold", f))
    result = train(train_set, fold_config)
    scores = predict(result.model, test_set, config.mode, config.diffnorm, config.input_standardize).scores
    report = evaluate(scores, result.dev_threshold)
    logger.info(f"  📊 Fold {f + 1}: EER={report.eer:.4f} HTER={report.hter:.4f}")
    return report


async def _run_folds(samples, folds, k, config, jobs) -> list[EvalReport]:
    semaphore = asyncio.Semaphore(jobs)

    async def _one(f: int) -> EvalReport:
        async with semaphore:
            return await asyncio.to_thread(_run_fold, samples, folds, f, config)

    return list(await asyncio.gather(*(_one(f) for f in range(k))))


def kfold_eval(
    samples: list[LabeledSample],
    config: TrainConfig,
    k: int = 10,
    jobs: int = 1,
    folds: Optional[np.ndarray] = None,
) -> KFoldReport:
    """Train and evaluate one model per fold; thresholds come from each fold's dev slice."""
    if folds is None:
        folds = assign_folds(samples, k, config.seed)
    logger.info(f"🔁 {k}-fold evaluation of {config.mode} ({config.diffnorm}) on {len(samples)} samples...")

    if jobs > 1:
        reports = asyncio.run(_run_folds(samples, folds, k, config, jobs))
    else:
        reports = [_run_fold(samples, folds, f, config) for f in range(k)]

    table = pd.DataFrame(
        [{"fold": f + 1, **r.as_row()} for f, r in enumerate(reports)],
        columns=FOLD_COLUMNS,
    )
    return KFoldReport(
        folds=table,
        eer=mean_std(table["eer"]),
        hter=mean_std(table["hter"]),
        reports=reports,
    )
