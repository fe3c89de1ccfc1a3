"""
Central configuration for the flash anti-spoofing pipeline.
Geometry, photometry, architecture, training and evaluation defaults,
plus the run-config file loader used by every CLI command.
"""

from __future__ import annotations

import configparser
import dataclasses
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Optional

from dotenv import load_dotenv

from src.errors import ConfigError

load_dotenv()

logger = logging.getLogger(__name__)

# ============================================
# Environment
# ============================================

DEFAULT_SEED = 1234
ENV_SEED = os.getenv("ATRFAS_SEED", "")
LOG_LEVEL = os.getenv("ATRFAS_LOG_LEVEL", "INFO").upper()
DEFAULT_JOBS = int(os.getenv("ATRFAS_JOBS", "1"))

# ============================================
# Geometry
# ============================================

IMAGE_SIZE = 64          # aligned frame height/width
DEPTH_DOWNSCALE = 4      # stem downsamples twice; depth labels live at H/4
N0 = 5                   # flash frames per capture
CHANNELS = 1             # grayscale; the flash colour is collapsed to intensity

# ============================================
# Photometry (Lambertian renderer)
# ============================================

AMBIENT_RANGE = (0.2, 1.5)
K_A_RANGE = (0.5, 1.5)
K_D_RANGE = (0.5, 1.5)
FLASH_SCALE_RANGE = (0.5, 1.0)   # I_d = (1, 2, ..., N0) * scale
NOISE_SIGMA = 0.01
RELIEF = 0.35                    # surface height as a fraction of the image height
LIGHT_JITTER = 0.0               # per-frame light direction jitter (off)
CLAMP_WARN_FRACTION = 0.01

# Acquisition conditions: ambient sub-ranges of AMBIENT_RANGE
AMBIENT_SCENARIOS = {
    "dark_room":     (0.20, 0.30),
    "street_lights": (0.30, 0.45),
    "bedroom":       (0.45, 0.60),
    "shadow":        (0.60, 0.75),
    "backlight":     (0.75, 0.90),
    "office":        (0.90, 1.10),
    "cloudy":        (1.10, 1.30),
    "sunlight":      (1.30, 1.50),
}
HELD_OUT_SCENARIOS = ("bedroom", "sunlight")

# Sequences per split and attack type
TRAIN_COUNTS = {"live": 100, "print": 40, "replay": 40, "mask": 40}
TEST_COUNTS = {"live": 30, "print": 10, "replay": 10, "mask": 10}

ATTACK_TYPES = ("print", "replay", "mask")   # gate index order
ATTACK_VARIANTS = {
    "none":   ("live",),
    "print":  ("flat", "bent"),
    "replay": ("phone", "monitor", "tv"),
    "mask":   ("mask", "head_model"),
}
SPOOF_DEPTH = 0.5

# ============================================
# Architecture
# ============================================

NUM_EXPERTS = 3
STEM_CHANNELS = 16
EXPERT_WIDTHS = (16, 32, 64)      # ResUNet levels
ATTENTION_WIDTHS = (16, 16, 32)   # reduced ResUNet inside the attention gate
GATE_WIDTHS = (16, 32, 32)        # type gate convolutions
HEAD_WIDTHS = (8, 16, 32)         # classification head convolutions
POS_EMBED_STD = 0.02

ABLATION_MODES = (
    "woMEMM", "Avg", "Sum", "Cat", "woMEMM_ATT",
    "ATT", "RG", "RG_ATT", "TG", "DGM",
)
DIFFNORM_SETTINGS = ("woDN", "adjacent")
GATED_MODES = ("TG", "DGM")       # modes with gate supervision

# ============================================
# Training
# ============================================

BATCH_SIZE = 4
LEARNING_RATE = 1e-4
LR_DECAY = 0.97          # per epoch
EPOCHS = 30
VAL_FRACTION = 0.1
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
GATE_LR_SCALE = 10.0    # type-gate parameters step this much faster

# Loss trade-off (total = c * L_c + d * L_d + g * L_g)
LOSS_WEIGHTS = {
    "c": 1.0,
    "d": 1.0,
    "g": 0.5,
}
PROB_CLAMP = 1e-6

# ============================================
# Evaluation
# ============================================

KFOLDS = 10
N0_SWEEP = (3, 4, 5, 6, 7, 8)
TIMING_RUNS = 100

# ============================================
# Data Storage
# ============================================

DATA_DIR = os.path.join(os.path.dirname(os.path.dirname(__file__)), "data")
RUNS_DIR = os.path.join(os.path.dirname(os.path.dirname(__file__)), "runs")
DATASET_MAGIC = "ATRFAS-DS v1"
CHECKPOINT_MAGIC = "ATRFAS-CKPT v1"
MANIFEST_FILE = "manifest.json"
CHECKPOINT_FILE = "model.ckpt"
TRAIN_LOG_FILE = "train.log"
RESOLVED_CONFIG_FILE = "config.resolved.ini"
RUNS_FILE = "runs.json"


# ============================================
# Typed config records
# ============================================

@dataclass
class GeneratorConfig:
    height: int = IMAGE_SIZE
    width: int = IMAGE_SIZE
    n0: int = N0
    train_live: int = TRAIN_COUNTS["live"]
    train_print: int = TRAIN_COUNTS["print"]
    train_replay: int = TRAIN_COUNTS["replay"]
    train_mask: int = TRAIN_COUNTS["mask"]
    test_live: int = TEST_COUNTS["live"]
    test_print: int = TEST_COUNTS["print"]
    test_replay: int = TEST_COUNTS["replay"]
    test_mask: int = TEST_COUNTS["mask"]
    k_a_min: float = K_A_RANGE[0]
    k_a_max: float = K_A_RANGE[1]
    k_d_min: float = K_D_RANGE[0]
    k_d_max: float = K_D_RANGE[1]
    flash_scale_min: float = FLASH_SCALE_RANGE[0]
    flash_scale_max: float = FLASH_SCALE_RANGE[1]
    noise_sigma: float = NOISE_SIGMA
    relief: float = RELIEF
    light_jitter: float = LIGHT_JITTER
    protocol: str = "intra_type"
    test_scenarios: tuple = HELD_OUT_SCENARIOS

    @property
    def depth_size(self) -> tuple[int, int]:
        return self.height // DEPTH_DOWNSCALE, self.width // DEPTH_DOWNSCALE

    def counts(self, split: str) -> dict[str, int]:
        """Requested sequences per attack type for one split."""
        return {
            kind: getattr(self, f"{split}_{kind}")
            for kind in ("live", "print", "replay", "mask")
        }


@dataclass
class TrainConfig:
    batch_size: int = BATCH_SIZE
    lr: float = LEARNING_RATE
    decay: float = LR_DECAY
    epochs: int = EPOCHS
    n0: int = N0
    seed: int = DEFAULT_SEED
    mode: str = "DGM"
    lambda_c: float = LOSS_WEIGHTS["c"]
    lambda_d: float = LOSS_WEIGHTS["d"]
    lambda_g: float = LOSS_WEIGHTS["g"]
    depth_loss: str = "bce"
    input_standardize: bool = False
    diffnorm: str = "dn"
    val_fraction: float = VAL_FRACTION
    num_experts: int = NUM_EXPERTS
    stem_channels: int = STEM_CHANNELS
    tie_experts: bool = False
    gate_lr_scale: float = GATE_LR_SCALE

    def validate(self) -> "TrainConfig":
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 < self.decay <= 1:
            raise ConfigError(f"decay must lie in (0, 1], got {self.decay}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.mode not in ABLATION_MODES:
            raise ConfigError(f"Unknown mode '{self.mode}' (expected one of {', '.join(ABLATION_MODES)})")
        if self.diffnorm not in ("dn", "none", "adjacent"):
            raise ConfigError(f"Unknown diffnorm variant '{self.diffnorm}'")
        if self.depth_loss not in ("bce", "softmax2d"):
            raise ConfigError(f"Unknown depth_loss '{self.depth_loss}'")
        if min(self.lambda_c, self.lambda_d, self.lambda_g) < 0:
            raise ConfigError("Loss weights must be non-negative")
        if max(self.lambda_c, self.lambda_d, self.lambda_g) <= 0:
            raise ConfigError("At least one loss weight must be positive")
        if self.gate_lr_scale <= 0:
            raise ConfigError(f"gate_lr_scale must be > 0, got {self.gate_lr_scale}")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")
        return self


@dataclass
class EvalConfig:
    folds: int = KFOLDS
    n0_values: tuple = N0_SWEEP
    timing_runs: int = TIMING_RUNS
    settings: tuple = ABLATION_MODES + DIFFNORM_SETTINGS


@dataclass
class PathsConfig:
    data_dir: str = DATA_DIR
    out_dir: str = RUNS_DIR


@dataclass
class RunSection:
    seed: int = DEFAULT_SEED
    jobs: int = DEFAULT_JOBS


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    @property
    def seed(self) -> int:
        return self.run.seed


SECTIONS = ("run", "generator", "train", "eval", "paths")

# [train] fields filled from other sections; setting them directly is an error
DERIVED_TRAIN_KEYS = {"seed": "[run] seed", "n0": "[generator] n0"}


def _coerce(raw: str, default: Any, where: str) -> Any:
    """Parse a config value into the type of its default."""
    text = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [item.strip() for item in text.split(",") if item.strip()]
            item_type = type(default[0]) if default else str
            return tuple(item_type(item) for item in items)
        return text
    except ValueError:
        raise ConfigError(f"Malformed value for {where}: '{raw}'") from None


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _env_seed() -> Optional[int]:
    if not ENV_SEED:
        return None
    try:
        return int(ENV_SEED)
    except ValueError:
        raise ConfigError(f"ATRFAS_SEED must be an integer, got '{ENV_SEED}'") from None


def load_run_config(path: Optional[str] = None, seed: Optional[int] = None) -> RunConfig:
    """Load a sectioned key-value run config; unknown keys are hard errors.

    Seed precedence: explicit ``seed`` > file ``[run] seed`` > ATRFAS_SEED > DEFAULT_SEED.
    """
    cfg = RunConfig()
    file_seed = None

    if path:
        if not os.path.exists(path):
            raise ConfigError(f"Config file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str  # keep key case
        try:
            parser.read(path)
        except configparser.Error as e:
            raise ConfigError(f"Cannot parse config {path}: {e}") from None

        for section in parser.sections():
            if section not in SECTIONS:
                raise ConfigError(f"Unknown config section [{section}] in {path}")
            record = getattr(cfg, section)
            known = {f.name: f for f in dataclasses.fields(record)}
            for key, raw in parser.items(section):
                if key not in known:
                    raise ConfigError(f"Unknown config key '{key}' in section [{section}]")
                if section == "train" and key in DERIVED_TRAIN_KEYS:
                    raise ConfigError(f"[train] {key} is derived; set {DERIVED_TRAIN_KEYS[key]} instead")
                value = _coerce(raw, getattr(record, key), f"[{section}] {key}")
                setattr(record, key, value)
                if section == "run" and key == "seed":
                    file_seed = value

    env_seed = _env_seed()
    if seed is not None:
        cfg.run.seed = int(seed)
    elif file_seed is None and env_seed is not None:
        cfg.run.seed = env_seed

    cfg.train.seed = cfg.run.seed
    cfg.train.n0 = cfg.generator.n0
    cfg.train.validate()
    return cfg


def config_to_parser(cfg: RunConfig) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section in SECTIONS:
        record = getattr(cfg, section)
        parser[section] = {
            f.name: _format(getattr(record, f.name))
            for f in dataclasses.fields(record)
            if not (section == "train" and f.name in DERIVED_TRAIN_KEYS)
        }
    return parser


def echo_config(cfg: RunConfig, out_dir: str) -> str:
    """Write the fully-resolved config into an output directory."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, RESOLVED_CONFIG_FILE)
    with open(path, "w") as f:
        config_to_parser(cfg).write(f)
    return path
