"""
Checkpoint format ATRFAS-CKPT v1: magic line, one-line JSON config echo,
then for every parameter its name on a line followed by the tensor record.
"""

from __future__ import annotations

import json
import logging
import os
from typing import Any

from src.config import CHECKPOINT_MAGIC
from src.errors import DataError, DimensionError
from src.model.atrfas import AtrFasModel
from src.ndarr.serialize import read_tensor, write_tensor

logger = logging.getLogger(__name__)


def save_checkpoint(model: AtrFasModel, path: str, meta: dict[str, Any]) -> str:
    """Write ``model`` plus ``meta`` (mode, seed, ...); same inputs give the same bytes."""
    echo = {**model.config_echo(), **meta}
    try:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "wb") as f:
            f.write(f"{CHECKPOINT_MAGIC}\n".encode("ascii"))
            f.write((json.dumps(echo, sort_keys=True) + "\n").encode("utf-8"))
            for name, param in model.named_parameters():
                f.write(f"{name}\n".encode("ascii"))
                write_tensor(f, param)
    except OSError as e:
        raise DataError(f"Cannot write checkpoint {path}: {e}") from e
    return path


def load_checkpoint(path: str) -> tuple[AtrFasModel, dict[str, Any]]:
    """Rebuild the model described by the config echo and load its parameters."""
    if not os.path.exists(path):
        raise DataError(f"Checkpoint not found: {path}")
    try:
        with open(path, "rb") as f:
            if f.readline().decode("ascii", "replace").strip() != CHECKPOINT_MAGIC:
                raise DataError(f"{path} is not an {CHECKPOINT_MAGIC} file")
            echo = json.loads(f.readline().decode("utf-8"))
            state = {}
            while True:
                name = f.readline()
                if not name:
                    break
                state[name.decode("ascii").strip()] = read_tensor(f)
    except DataError:
        raise
    except (OSError, ValueError) as e:
        raise DataError(f"Corrupt checkpoint {path}: {e}") from e

    try:
        model = AtrFasModel(
            n_frames=echo["n_frames"],
            height=echo["height"],
            width=echo["width"],
            seed=echo.get("seed", 0),
            in_channels=echo["in_channels"],
            num_experts=echo["num_experts"],
            stem_channels=echo["stem_channels"],
        )
        model.load_state_dict(state)
    except (KeyError, DimensionError) as e:
        raise DataError(f"Checkpoint {path} does not match its config echo: {e}") from e
    return model, echo
