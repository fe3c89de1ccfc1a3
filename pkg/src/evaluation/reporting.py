"""
Report formatting — tab-separated tables, ROC dumps and human summaries.
"""

from __future__ import annotations

import os

import pandas as pd

from src.errors import DataError
from src.evaluation.metrics import EvalReport


def format_table(df: pd.DataFrame) -> str:
    """Tab-separated table with a header row."""
    return df.to_csv(sep="\t", index=False, lineterminator="\n", float_format="%.6g")


def format_ablation_table(df: pd.DataFrame) -> pd.DataFrame:
    """setting / HTER% / EER% as "mean ± std" percentages."""
    return pd.DataFrame({
        "setting": df["setting"],
        "HTER%": [f"{m * 100:.2f} ± {s * 100:.2f}" for m, s in zip(df["hter_mean"], df["hter_std"])],
        "EER%": [f"{m * 100:.2f} ± {s * 100:.2f}" for m, s in zip(df["eer_mean"], df["eer_std"])],
    })


def write_roc_csv(report: EvalReport, path: str) -> str:
    try:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        report.roc[["threshold", "far", "frr"]].to_csv(path, index=False, lineterminator="\n")
    except OSError as e:
        raise DataError(f"Cannot write ROC curve to {path}: {e}") from e
    return path


def write_table(df: pd.DataFrame, path: str) -> str:
    try:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w") as f:
            f.write(format_table(df))
    except OSError as e:
        raise DataError(f"Cannot write table to {path}: {e}") from e
    return path


def format_eval_summary(report: EvalReport, title: str = "Evaluation") -> str:
    lines = [
        f"🛡️ *{title}*",
        "",
        f"  EER:   {report.eer * 100:.2f}% (threshold {report.eer_threshold:.4f})",
        f"  HTER:  {report.hter * 100:.2f}% at dev threshold {report.threshold:.4f}",
        f"  FAR:   {report.far * 100:.2f}%",
        f"  FRR:   {report.frr * 100:.2f}%",
    ]
    if report.folds is not None and len(report.folds):
        lines += ["", f"  Folds: {len(report.folds)}"]
    return "\n".join(lines)
