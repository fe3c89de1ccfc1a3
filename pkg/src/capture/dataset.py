"""
Dataset Container — ATRFAS-DS v1.
A directory holding ``manifest.json`` plus one binary file per capture with
its frames, flash levels, depth label and gate label.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Optional

import pandas as pd

from src.config import DATASET_MAGIC, MANIFEST_FILE, GeneratorConfig
from src.errors import DataError
from src.capture.diffnorm import FlashSequence
from src.capture.synthgen import LabeledSample
from src.ndarr.serialize import read_tensor, write_tensor
from src.training.losses import make_gate_target

logger = logging.getLogger(__name__)

SAMPLE_DIR = "samples"
RECORDS = ("frames", "flash_levels", "depth_label", "gate_label")
INDEX_COLUMNS = ["id", "split", "file", "label", "attack_type", "variant", "scenario", "cls_label"]


def _write_sample(root: str, sample: LabeledSample) -> dict:
    rel = os.path.join(SAMPLE_DIR, f"{sample.id}.bin")
    with open(os.path.join(root, rel), "wb") as f:
        f.write(f"{DATASET_MAGIC}\n".encode("ascii"))
        offsets = {
            name: write_tensor(f, value)
            for name, value in zip(
                RECORDS,
                (sample.sequence.frames, sample.sequence.flash_levels, sample.depth_label, sample.gate_label),
            )
        }
    seq = sample.sequence
    return {
        "id": sample.id,
        "split": sample.split,
        "file": rel,
        "label": seq.label,
        "attack_type": seq.attack_type,
        "variant": seq.variant,
        "scenario": seq.scenario,
        "cls_label": int(sample.cls_label),
        "gate_label": [round(float(x), 8) for x in sample.gate_label],
        "offsets": offsets,
    }


def write_dataset(samples: list[LabeledSample], out_dir: str, config: Optional[GeneratorConfig] = None) -> str:
    """Write samples and the manifest; identical inputs give byte-identical files."""
    try:
        os.makedirs(os.path.join(out_dir, SAMPLE_DIR), exist_ok=True)
        manifest_path = os.path.join(out_dir, MANIFEST_FILE)
        if os.path.exists(manifest_path):
            logger.warning(f"  ⚠️ Overwriting dataset in {out_dir}")
        entries = [_write_sample(out_dir, s) for s in samples]
        manifest = {
            "magic": DATASET_MAGIC,
            "generator": dataclasses.asdict(config) if config is not None else {},
            "samples": entries,
        }
        with open(manifest_path, "w") as f:
            json.dump(manifest, f, indent=2)
            f.write("\n")
    except OSError as e:
        raise DataError(f"Cannot write dataset to {out_dir}: {e}") from e
    logger.info(f"  💾 Wrote {len(entries)} samples to {out_dir}")
    return manifest_path


@dataclass
class Dataset:
    """A loaded container. ``index`` is the manifest as a DataFrame."""

    root: str
    index: pd.DataFrame
    generator: dict = field(default_factory=dict)
    _entries: dict = field(default_factory=dict, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.index)

    def load_sample(self, sample_id: str) -> LabeledSample:
        if sample_id in self._cache:
            return self._cache[sample_id]
        entry = self._entries.get(sample_id)
        if entry is None:
            raise DataError(f"Unknown sample '{sample_id}'")
        path = os.path.join(self.root, entry["file"])
        try:
            with open(path, "rb") as f:
                if f.readline().decode("ascii", "replace").strip() != DATASET_MAGIC:
                    raise DataError(f"{path} is not an {DATASET_MAGIC} sample file")
                arrays = {name: read_tensor(f, entry["offsets"][name]) for name in RECORDS}
        except DataError:
            raise
        except OSError as e:
            raise DataError(f"Cannot read sample {path}: {e}") from e

        sample = LabeledSample(
            sequence=FlashSequence(
                frames=arrays["frames"],
                flash_levels=arrays["flash_levels"],
                label=entry["label"],
                attack_type=entry["attack_type"],
                variant=entry["variant"],
                scenario=entry["scenario"],
            ),
            depth_label=arrays["depth_label"],
            gate_label=make_gate_target(int(entry["cls_label"]), entry["attack_type"], arrays["gate_label"].size),
            cls_label=int(entry["cls_label"]),
            id=sample_id,
            split=entry["split"],
        )
        self._cache[sample_id] = sample
        return sample

    def split(self, name: str) -> list[LabeledSample]:
        ids = self.index.loc[self.index["split"] == name, "id"]
        return [self.load_sample(i) for i in ids]

    @property
    def samples(self) -> list[LabeledSample]:
        return [self.load_sample(i) for i in self.index["id"]]

    def counts(self) -> pd.DataFrame:
        """Samples per split and attack type."""
        return (
            self.index.groupby(["split", "attack_type"], sort=False)
            .size()
            .rename("count")
            .reset_index()
        )


def load_dataset(root: str) -> Dataset:
    manifest_path = os.path.join(root, MANIFEST_FILE)
    if not os.path.exists(manifest_path):
        raise DataError(f"No dataset at {root} (missing {MANIFEST_FILE})")
    try:
        with open(manifest_path, "r") as f:
            manifest = json.load(f)
    except (json.JSONDecodeError, OSError) as e:
        raise DataError(f"Corrupt manifest {manifest_path}: {e}") from e
    if manifest.get("magic") != DATASET_MAGIC:
        raise DataError(f"{manifest_path} is not an {DATASET_MAGIC} manifest")

    entries = manifest.get("samples", [])
    index = pd.DataFrame([{k: e[k] for k in INDEX_COLUMNS} for e in entries], columns=INDEX_COLUMNS)
    logger.info(f"📂 Loaded dataset index from {root} ({len(index)} samples)")
    return Dataset(
        root=root,
        index=index,
        generator=manifest.get("generator", {}),
        _entries={e["id"]: e for e in entries},
    )
