"""
Flash Frame Count Sweep — accuracy and inference time against N₀.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from typing import Sequence

import numpy as np
import pandas as pd

from src.config import GeneratorConfig, TrainConfig
from src.errors import ConfigError
from src.capture.synthgen import render_dataset
from src.evaluation.metrics import evaluate
from src.model.atrfas import AtrFasModel, forward
from src.ndarr.tensor import Tensor, no_grad
from src.training.trainer import input_frame_count, predict, prepare_input, train

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ["n0", "N", "hter", "eer", "inference_ms"]


def time_forward(model: AtrFasModel, x: np.ndarray, mode: str, runs: int) -> float:
    """Median wall-clock milliseconds of one forward pass (no data loading)."""
    timings = []
    with no_grad():
        forward(model, Tensor(x), mode)   # warm-up
        for _ in range(max(1, runs)):
            start = time.perf_counter()
            forward(model, Tensor(x), mode)
            timings.append((time.perf_counter() - start) * 1000.0)
    return float(np.median(timings))


def sweep_n0(
    generator: GeneratorConfig,
    config: TrainConfig,
    n0_values: Sequence[int],
    seed: int,
    timing_runs: int = 100,
    jobs: int = 1,
) -> pd.DataFrame:
    """Render matched datasets per N₀, train, evaluate on the test split and time inference."""
    bad = [n for n in n0_values if n < 3]
    if bad:
        raise ConfigError(f"n0 values must be >= 3, got {bad}")

    rows = []
    for n0 in n0_values:
        logger.info(f"⏱️ N0 = {n0} ({input_frame_count(n0, config.diffnorm)} input frames)")
        samples = render_dataset(dataclasses.replace(generator, n0=n0), seed, jobs)
        train_set = [s for s in samples if s.split == "train"]
        test_set = [s for s in samples if s.split == "test"]
        if not test_set:
            raise ConfigError("N0 sweep needs a test split")

        result = train(train_set, dataclasses.replace(config, n0=n0))
        scores = predict(result.model, test_set, config.mode, config.diffnorm, config.input_standardize).scores
        report = evaluate(scores, result.dev_threshold)
        x = prepare_input(test_set[0], config.diffnorm, config.input_standardize)
        rows.append({
            "n0": n0,
            "N": input_frame_count(n0, config.diffnorm),
            "hter": report.hter,
            "eer": report.eer,
            "inference_ms": time_forward(result.model, x, config.mode, timing_runs),
        })
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)
