"""
Ablation Grid — mixture / gating modes and differential-normalisation variants.
Every setting runs the same folds and seeds, so rows are paired.
"""

from __future__ import annotations

import dataclasses
import logging

import pandas as pd

from src.config import ABLATION_MODES, DIFFNORM_SETTINGS, TrainConfig
from src.errors import ConfigError
from src.capture.synthgen import LabeledSample
from src.evaluation.kfold import assign_folds, kfold_eval

logger = logging.getLogger(__name__)

SETTING_ALIASES = {"no_diffnorm": "woDN", "adjacent_diff": "adjacent", "DN": "DGM"}
ABLATION_COLUMNS = ["setting", "mode", "diffnorm", "hter_mean", "hter_std", "eer_mean", "eer_std"]


def setting_config(setting: str, base: TrainConfig) -> TrainConfig:
    """Training config for one grid row; diffnorm variants use the full model."""
    setting = SETTING_ALIASES.get(setting, setting)
    if setting in ABLATION_MODES:
        return dataclasses.replace(base, mode=setting, diffnorm="dn")
    if setting == "woDN":
        return dataclasses.replace(base, mode="DGM", diffnorm="none")
    if setting == "adjacent":
        return dataclasses.replace(base, mode="DGM", diffnorm="adjacent")
    raise ConfigError(
        f"Unknown ablation setting '{setting}' (expected one of {', '.join(ABLATION_MODES + DIFFNORM_SETTINGS)})"
    )


def run_ablation(
    samples: list[LabeledSample],
    settings: list[str],
    config: TrainConfig,
    k: int = 10,
    jobs: int = 1,
) -> pd.DataFrame:
    """One k-fold evaluation per setting, sharing folds and per-fold seeds."""
    configs = [(s, setting_config(s, config)) for s in settings]   # fail fast on unknown settings
    folds = assign_folds(samples, k, config.seed)

    rows = []
    for setting, cfg in configs:
        logger.info(f"🧪 Ablation setting {setting}")
        report = kfold_eval(samples, cfg, k=k, jobs=jobs, folds=folds)
        rows.append({
            "setting": setting,
            "mode": cfg.mode,
            "diffnorm": cfg.diffnorm,
            "hter_mean": report.hter[0],
            "hter_std": report.hter[1],
            "eer_mean": report.eer[0],
            "eer_std": report.eer[1],
        })
    return pd.DataFrame(rows, columns=ABLATION_COLUMNS)
