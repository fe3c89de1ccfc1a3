"""
History Tracker — Run Ledger & Best Results.
Every train / eval / ablate / sweep command appends a record to ``runs.json``
in its output directory; stats summarise the best EER per setting.
"""

from __future__ import annotations

import json
import logging
import math
import os
from typing import Any, Optional

import pandas as pd

from src.config import RUNS_FILE
from src.errors import DataError

logger = logging.getLogger(__name__)


def _ledger_path(out_dir: str) -> str:
    return os.path.join(out_dir, RUNS_FILE)


def _clean(value: Any) -> Any:
    """JSON-safe metric values (NaN becomes null)."""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if hasattr(value, "item"):
        return _clean(value.item())
    return value


def load_runs(out_dir: str) -> list[dict]:
    """Load existing run records."""
    path = _ledger_path(out_dir)
    if not os.path.exists(path):
        return []
    try:
        with open(path, "r") as f:
            return json.load(f)
    except (json.JSONDecodeError, IOError):
        logger.warning(f"  ⚠️ Unreadable run ledger {path}; starting a new one")
        return []


def _save_runs(out_dir: str, runs: list[dict]):
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(_ledger_path(out_dir), "w") as f:
            json.dump(runs, f, indent=2)
            f.write("\n")
    except OSError as e:
        raise DataError(f"Cannot write run ledger in {out_dir}: {e}") from e


def log_run(
    out_dir: str,
    command: str,
    setting: str,
    seed: int,
    metrics: dict[str, Any],
    extra: Optional[dict[str, Any]] = None,
) -> dict:
    """Append one run record; records carry no wall-clock time."""
    runs = load_runs(out_dir)
    record = {
        "id": len(runs) + 1,
        "command": command,
        "setting": setting,
        "seed": seed,
        "metrics": _clean(metrics),
    }
    if extra:
        record["extra"] = _clean(extra)
    runs.append(record)
    _save_runs(out_dir, runs)
    logger.info(f"  📝 Run #{record['id']} logged ({command} {setting})")
    return record


def get_run_stats(out_dir: str) -> pd.DataFrame:
    """Best (lowest) EER per setting, with the run that achieved it."""
    rows = [
        {"setting": r["setting"], "command": r["command"], "id": r["id"], "eer": r["metrics"].get("eer")}
        for r in load_runs(out_dir)
        if r.get("metrics", {}).get("eer") is not None
    ]
    if not rows:
        return pd.DataFrame(columns=["setting", "command", "id", "eer", "runs"])
    df = pd.DataFrame(rows)
    counts = df.groupby("setting").size().rename("runs")
    best = df.sort_values(["eer", "id"]).groupby("setting", sort=True).head(1)
    return best.merge(counts, left_on="setting", right_index=True).sort_values("setting").reset_index(drop=True)
