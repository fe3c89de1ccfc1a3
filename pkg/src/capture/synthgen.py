"""
Synthetic Flash Captures — Lambertian Renderer.
Builds analytic face / attack surfaces, renders them under a stepped screen
flash and packs each capture with its depth, gate and class labels.
"""

from __future__ import annotations

import asyncio
import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from src.config import (
    AMBIENT_RANGE,
    AMBIENT_SCENARIOS,
    ATTACK_TYPES,
    ATTACK_VARIANTS,
    CLAMP_WARN_FRACTION,
    DEPTH_DOWNSCALE,
    NUM_EXPERTS,
    SPOOF_DEPTH,
    GeneratorConfig,
)
from src.errors import ConfigError, DimensionError, ParameterError
from src.capture.diffnorm import FlashSequence
from src.ndarr.rng import RngStream, derive_seed
from src.training.losses import make_gate_target

logger = logging.getLogger(__name__)

MIN_GRID = 8
SURFACE_KINDS = ("live", "print", "replay", "mask")


# ============================================
# Surfaces
# ============================================

@dataclass(frozen=True)
class SurfaceParams:
    """Shape knobs for one analytic surface; grid coordinates run over [-1, 1]."""

    variant: str = "live"
    center: tuple[float, float] = (0.0, 0.0)
    radii: tuple[float, float] = (0.70, 0.85)
    nose: float = 0.25
    tilt: tuple[float, float] = (0.0, 0.0)   # depth change across the full width / height
    bend: float = 0.0                        # cylindrical bend amplitude (print)
    cycles: int = 12                         # grating periods across the width (replay)
    grating: float = 0.04                    # grating amplitude (replay)
    depth_factor: float = 0.6                # mask relief relative to a live face
    rim: float = 0.15                        # mask edge step


VARIANT_DEFAULTS = {
    "live": SurfaceParams(variant="live"),
    "flat": SurfaceParams(variant="flat"),
    "bent": SurfaceParams(variant="bent", bend=0.12),
    "phone": SurfaceParams(variant="phone", cycles=16),
    "monitor": SurfaceParams(variant="monitor", cycles=12),
    "tv": SurfaceParams(variant="tv", cycles=8),
    "mask": SurfaceParams(variant="mask", depth_factor=0.6, rim=0.15),
    "head_model": SurfaceParams(variant="head_model", depth_factor=0.8, rim=0.05),
}


def sample_surface_params(kind: str, variant: Optional[str], rng: RngStream) -> SurfaceParams:
    """Jitter the variant's defaults. The draw order is the same for every kind."""
    kind = "live" if kind == "none" else kind
    if kind not in SURFACE_KINDS:
        raise ParameterError(f"Unknown surface kind '{kind}'")
    variant = variant or ATTACK_VARIANTS["none" if kind == "live" else kind][0]
    if variant not in VARIANT_DEFAULTS:
        raise ParameterError(f"Unknown variant '{variant}' for '{kind}'")
    base = VARIANT_DEFAULTS[variant]
    center = tuple(rng.uniform(-0.08, 0.08, shape=2))
    scale = rng.uniform(0.9, 1.1, shape=2)
    nose = rng.uniform(0.15, 0.35)
    tilt = tuple(rng.uniform(-0.2, 0.2, shape=2))
    return replace(
        base,
        center=(float(center[0]), float(center[1])),
        radii=(base.radii[0] * float(scale[0]), base.radii[1] * float(scale[1])),
        nose=float(nose),
        tilt=(float(tilt[0]), float(tilt[1])),
    )


def _grid(size: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    h, w = size
    v, u = np.meshgrid(np.linspace(-1.0, 1.0, h), np.linspace(-1.0, 1.0, w), indexing="ij")
    return u, v


def _face(u: np.ndarray, v: np.ndarray, p: SurfaceParams) -> tuple[np.ndarray, np.ndarray]:
    """Normalised ellipsoidal cap with a nose ridge, plus the ellipse radius field."""
    du, dv = u - p.center[0], v - p.center[1]
    q = (du / p.radii[0]) ** 2 + (dv / p.radii[1]) ** 2
    cap = np.maximum(0.0, 1.0 - q) ** 1.5
    ridge = p.nose * np.exp(-(du ** 2) / (2 * 0.08 ** 2) - (dv - 0.05) ** 2 / (2 * 0.25 ** 2))
    z = cap + ridge * np.maximum(0.0, 1.0 - q) ** 1.5
    z = (z - z.min()) / (z.max() - z.min())
    return z, q


def _plane(u: np.ndarray, v: np.ndarray, p: SurfaceParams) -> np.ndarray:
    z = 0.5 + 0.5 * p.tilt[0] * u + 0.5 * p.tilt[1] * v
    if p.bend:
        z = z + p.bend * (1.0 - u ** 2)
    return z


def make_surface(
    kind: str,
    params: Optional[SurfaceParams] = None,
    seed: int = 0,
    size: tuple[int, int] = (64, 64),
) -> np.ndarray:
    """Analytic depth field z(x, y) in normalised units.

    live: ellipsoidal cap with a nose ridge, spanning [0, 1].
    print: tilted plane (optionally bent).
    replay: the print plane plus a zero-mean periodic grating along x.
    mask: a live face scaled by ``depth_factor`` with a step at the rim.
    """
    kind = "live" if kind == "none" else kind
    if kind not in SURFACE_KINDS:
        raise ParameterError(f"Unknown surface kind '{kind}'")
    if min(size) < MIN_GRID:
        raise DimensionError(f"surface grid must be at least {MIN_GRID}x{MIN_GRID}, got {size}")
    if params is None:
        params = sample_surface_params(kind, None, RngStream(seed))

    u, v = _grid(size)
    if kind == "live":
        return _face(u, v, params)[0]
    if kind == "mask":
        z, q = _face(u, v, params)
        return np.clip(params.depth_factor * z + params.rim * (q < 1.0), 0.0, 1.0)

    z = _plane(u, v, params)
    if kind == "replay":
        cols = np.arange(size[1])
        z = z + params.grating * np.sin(2 * np.pi * params.cycles * cols / size[1])[None, :]
    return z


def surface_cosine(surface: np.ndarray, relief: float, light: Optional[np.ndarray] = None) -> np.ndarray:
    """cosθ between the surface normal and ``light``, clipped at 0.

    Depth is scaled by ``relief · H`` so slopes are in pixel units.
    """
    height = surface * relief * surface.shape[0]
    dz_dy, dz_dx = np.gradient(height)
    normals = np.stack([-dz_dx, -dz_dy, np.ones_like(height)], axis=-1)
    normals /= np.linalg.norm(normals, axis=-1, keepdims=True)
    light = np.array([0.0, 0.0, 1.0]) if light is None else np.asarray(light, dtype=np.float64)
    light = light / np.linalg.norm(light)
    return np.maximum(normals @ light, 0.0)


# ============================================
# Scenes & rendering
# ============================================

@dataclass
class SceneSpec:
    surface: np.ndarray
    k_a: float
    k_d: float
    ambient: float
    flash_levels: np.ndarray
    attack_type: str = "none"
    noise_sigma: float = 0.0
    relief: float = 0.35
    light_jitter: float = 0.0
    variant: str = "live"
    scenario: str = ""

    def __post_init__(self):
        self.surface = np.asarray(self.surface, dtype=np.float64)
        self.flash_levels = np.asarray(self.flash_levels, dtype=np.float64)
        if self.surface.ndim != 2 or min(self.surface.shape) < MIN_GRID:
            raise DimensionError(f"surface must be a 2D grid of at least {MIN_GRID}x{MIN_GRID}")
        if not np.isfinite(self.surface).all():
            raise ParameterError("surface contains non-finite depth")
        if self.k_a <= 0 or self.k_d <= 0:
            raise ParameterError(f"reflection coefficients must be > 0, got k_a={self.k_a}, k_d={self.k_d}")
        if self.ambient < 0 or self.noise_sigma < 0:
            raise ParameterError("ambient and noise_sigma must be >= 0")
        if self.attack_type not in ("none",) + ATTACK_TYPES:
            raise ParameterError(f"Unknown attack type '{self.attack_type}'")
        steps = np.diff(self.flash_levels)
        if np.any(steps < 0):
            raise ParameterError("flash_levels must be ascending")
        if np.any(steps == 0):
            logger.warning("  ⚠️ Flash schedule has repeated levels; differential frames will be degenerate")

    @property
    def label(self) -> str:
        return "live" if self.attack_type == "none" else "spoof"


def render_lambertian(scene: SceneSpec, seed: int = 0) -> FlashSequence:
    """Frame f, pixel i: k_a·I_a + k_d·I_d[f]·cosθ_i + ε, ε ~ N(0, σ²).

    Frames are float64 in physical units. Negative intensities are clamped
    to zero; a warning is logged when more than 1 % of pixels clamp.
    """
    rng = RngStream(seed)
    n0 = scene.flash_levels.size
    h, w = scene.surface.shape

    if scene.light_jitter > 0:
        jitter = rng.child("light").normal(0.0, scene.light_jitter, shape=(n0, 2))
        cosines = [surface_cosine(scene.surface, scene.relief, np.array([jx, jy, 1.0])) for jx, jy in jitter]
    else:
        cosines = [surface_cosine(scene.surface, scene.relief)] * n0

    frames = np.empty((n0, 1, h, w), dtype=np.float64)
    for f in range(n0):
        frames[f, 0] = scene.k_a * scene.ambient + scene.k_d * scene.flash_levels[f] * cosines[f]
    if scene.noise_sigma > 0:
        frames += rng.child("noise").normal(0.0, scene.noise_sigma, shape=frames.shape)

    negative = frames < 0
    clamped = int(negative.sum())
    if clamped:
        frames[negative] = 0.0
        if clamped > CLAMP_WARN_FRACTION * frames.size:
            logger.warning(f"  ⚠️ Render clamped {clamped}/{frames.size} negative pixels")

    return FlashSequence(
        frames=frames,
        flash_levels=scene.flash_levels.copy(),
        label=scene.label,
        attack_type=scene.attack_type,
        variant=scene.variant,
        scenario=scene.scenario,
    )


def sample_scene(
    attack_type: str,
    config: GeneratorConfig,
    seed: int,
    variant: Optional[str] = None,
    scenario: Optional[str] = None,
) -> SceneSpec:
    """Draw surface and photometry for one capture.

    Draws do not depend on ``config.n0``, so captures rendered with the same
    seed at different frame counts share their scene.
    """
    rng = RngStream(seed)
    kind = "live" if attack_type == "none" else attack_type
    params = sample_surface_params(kind, variant, rng.child("surface"))
    surface = make_surface(kind, params, size=(config.height, config.width))

    photo = rng.child("photometry")
    low, high = AMBIENT_SCENARIOS[scenario] if scenario else AMBIENT_RANGE
    ambient = float(photo.uniform(low, high))
    k_a = float(photo.uniform(config.k_a_min, config.k_a_max))
    k_d = float(photo.uniform(config.k_d_min, config.k_d_max))
    scale = float(photo.uniform(config.flash_scale_min, config.flash_scale_max))

    return SceneSpec(
        surface=surface,
        k_a=k_a,
        k_d=k_d,
        ambient=ambient,
        flash_levels=np.arange(1, config.n0 + 1, dtype=np.float64) * scale,
        attack_type=attack_type,
        noise_sigma=config.noise_sigma,
        relief=config.relief,
        light_jitter=config.light_jitter,
        variant=params.variant,
        scenario=scenario or "",
    )


# ============================================
# Labelled samples
# ============================================

@dataclass
class LabeledSample:
    sequence: FlashSequence
    depth_label: np.ndarray     # [H', W'] in [0, 1]
    gate_label: np.ndarray      # [M], sums to 1
    cls_label: int              # 0 live, 1 spoof
    id: str = ""
    split: str = ""

    @property
    def attack_type(self) -> str:
        return self.sequence.attack_type


def depth_label_for(surface: np.ndarray, attack_type: str, downscale: int = DEPTH_DOWNSCALE) -> np.ndarray:
    """Area-averaged surface; live is min-max normalised, spoof is constant 0.5."""
    h, w = surface.shape
    if h % downscale or w % downscale:
        raise DimensionError(f"surface {surface.shape} is not divisible by {downscale}")
    shape = (h // downscale, w // downscale)
    if attack_type != "none":
        return np.full(shape, SPOOF_DEPTH, dtype=np.float64)
    pooled = surface.reshape(shape[0], downscale, shape[1], downscale).mean(axis=(1, 3))
    span = pooled.max() - pooled.min()
    return (pooled - pooled.min()) / span if span > 0 else np.zeros(shape)


def make_labeled_sample(
    scene: SceneSpec,
    seed: int,
    num_experts: int = NUM_EXPERTS,
    sample_id: str = "",
    split: str = "",
) -> LabeledSample:
    sequence = render_lambertian(scene, seed)
    is_spoof = scene.attack_type != "none"
    return LabeledSample(
        sequence=sequence,
        depth_label=depth_label_for(scene.surface, scene.attack_type),
        gate_label=make_gate_target(int(is_spoof), scene.attack_type, num_experts),
        cls_label=int(is_spoof),
        id=sample_id,
        split=split,
    )


# ============================================
# Dataset generation
# ============================================

@dataclass(frozen=True)
class SamplePlan:
    id: str
    split: str
    index: int
    attack_type: str
    variant: str
    scenario: str
    seed: int


def split_scenarios(config: GeneratorConfig, split: str) -> tuple[str, ...]:
    """Acquisition conditions a split may draw from."""
    unknown = set(config.test_scenarios) - set(AMBIENT_SCENARIOS)
    if unknown:
        raise ConfigError(f"Unknown test scenarios: {', '.join(sorted(unknown))}")
    if config.protocol == "mixed":
        return tuple(AMBIENT_SCENARIOS)
    if config.protocol != "intra_type":
        raise ConfigError(f"Unknown protocol '{config.protocol}' (expected intra_type or mixed)")
    if split == "test":
        return tuple(config.test_scenarios)
    train = tuple(s for s in AMBIENT_SCENARIOS if s not in config.test_scenarios)
    if not train:
        raise ConfigError("intra_type protocol leaves no scenarios for training")
    return train


def plan_dataset(config: GeneratorConfig, split_seed: int) -> list[SamplePlan]:
    """Deterministic sample list; variants are balanced round-robin within each type."""
    plans: list[SamplePlan] = []
    for split in ("train", "test"):
        counts = config.counts(split)
        if any(n < 0 for n in counts.values()):
            raise ConfigError(f"Sample counts must be >= 0, got {counts} for {split}")
        scenarios = split_scenarios(config, split)
        index = 0
        for kind, count in counts.items():
            attack_type = "none" if kind == "live" else kind
            variants = ATTACK_VARIANTS[attack_type]
            for i in range(count):
                seed = derive_seed(split_seed, split, index)
                scenario = scenarios[int(RngStream(seed).child("scenario").integers(0, len(scenarios)))]
                plans.append(SamplePlan(
                    id=f"{split}-{index:05d}",
                    split=split,
                    index=index,
                    attack_type=attack_type,
                    variant=variants[i % len(variants)],
                    scenario=scenario,
                    seed=seed,
                ))
                index += 1
    if not plans:
        raise ConfigError("Generator config requests no samples")
    return plans


def render_sample(plan: SamplePlan, config: GeneratorConfig, num_experts: int = NUM_EXPERTS) -> LabeledSample:
    scene = sample_scene(plan.attack_type, config, plan.seed, plan.variant, plan.scenario)
    return make_labeled_sample(
        scene, derive_seed(plan.seed, "render"), num_experts, sample_id=plan.id, split=plan.split
    )


async def _render_all(plans: list[SamplePlan], config: GeneratorConfig, jobs: int) -> list[LabeledSample]:
    semaphore = asyncio.Semaphore(max(1, jobs))

    async def _one(plan: SamplePlan) -> LabeledSample:
        async with semaphore:
            return await asyncio.to_thread(render_sample, plan, config)

    return list(await asyncio.gather(*(_one(p) for p in plans)))


def render_dataset(config: GeneratorConfig, split_seed: int, jobs: int = 1) -> list[LabeledSample]:
    """Render every planned sample; output order and values do not depend on ``jobs``."""
    plans = plan_dataset(config, split_seed)
    logger.info(f"🎨 Rendering {len(plans)} flash captures ({config.n0} frames, {config.height}x{config.width})...")
    if jobs <= 1:
        samples = [render_sample(p, config) for p in plans]
    else:
        samples = asyncio.run(_render_all(plans, config, jobs))
    logger.info(f"  ✅ Rendered {len(samples)} captures")
    return samples


def generate_dataset(config: GeneratorConfig, out_dir: str, split_seed: int, jobs: int = 1):
    """Render and write an ATRFAS-DS v1 container; returns the loaded index."""
    from src.capture.dataset import load_dataset, write_dataset

    samples = render_dataset(config, split_seed, jobs)
    write_dataset(samples, out_dir, config)
    return load_dataset(out_dir)
