"""Synthetic paired MRI/PET phantoms with a controllable class effect.

Class 0 is the baseline: an ellipsoidal "brain" with two bright bilateral
"hippocampus" blobs in MRI, and a smooth metabolic field in PET with two
posterior hot spots.  Class 1 shrinks the blobs by ``atrophy_radius_delta``
and dims the hot spots by ``hypometabolism_delta``.  Every subject also gets
a small random anatomy jitter that is independent of its class.
Coordinates are normalized to ``[-1, 1]`` per axis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BRAIN_AXES = (0.80, 0.70, 0.75)
BLOB_CENTRES = ((-0.32, -0.10, -0.10), (0.32, -0.10, -0.10))
BLOB_RADIUS = 0.24
HOTSPOT_CENTRES = ((-0.35, 0.35, 0.15), (0.35, 0.35, 0.15))
HOTSPOT_WIDTH = 0.22
EDGE = 0.04


@dataclass
class VolumePair:
    subject_id: str
    mri: np.ndarray
    pet: np.ndarray
    label: int

    def __post_init__(self):
        if self.mri.shape != self.pet.shape:
            raise ValueError(f"{self.subject_id}: MRI {self.mri.shape} and PET {self.pet.shape} differ")
        if self.label not in (0, 1):
            raise ValueError(f"{self.subject_id}: label must be 0 or 1, got {self.label}")


@dataclass
class SynthConfig:
    n_subjects: int = 120
    volume_size: int = 32
    atrophy_radius_delta: float = 0.12
    hypometabolism_delta: float = 0.6
    noise_sigma: float = 0.05
    jitter: float = 0.03
    seed: int = 0

    def validate(self) -> None:
        if self.n_subjects < 2:
            raise ValueError("need at least two subjects")
        if self.volume_size < 16:
            raise ValueError("volume_size must be at least 16")
        if self.atrophy_radius_delta < 0 or self.hypometabolism_delta < 0 or self.noise_sigma < 0:
            raise ValueError("effect sizes and noise must be non-negative")
        if BLOB_RADIUS - self.atrophy_radius_delta - self.jitter <= 0:
            raise ValueError(
                f"atrophy_radius_delta={self.atrophy_radius_delta} makes the blob vanish "
                f"(baseline radius {BLOB_RADIUS})"
            )


def _grid(s: int):
    ax = (np.arange(s) + 0.5) / s * 2 - 1
    return np.meshgrid(ax, ax, ax, indexing="ij")


def _soft_ball(dist: np.ndarray) -> np.ndarray:
    """1 inside, 0 outside, smooth over a shell of width ``EDGE``."""
    return 0.5 * (1 - np.tanh(dist / EDGE))


def phantom(s: int, label: int, cfg: SynthConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    x, y, z = _grid(s)
    scale = 1 + rng.uniform(-cfg.jitter, cfg.jitter, 3)
    axes = np.array(BRAIN_AXES) * scale
    r = np.sqrt((x / axes[0]) ** 2 + (y / axes[1]) ** 2 + (z / axes[2]) ** 2)
    brain = _soft_ball((r - 1) * axes.min())

    radius = BLOB_RADIUS + rng.uniform(-cfg.jitter, cfg.jitter) - (cfg.atrophy_radius_delta if label else 0.0)
    blobs = np.zeros_like(x)
    for c in BLOB_CENTRES:
        shift = rng.uniform(-cfg.jitter, cfg.jitter, 3)
        d = np.sqrt((x - c[0] - shift[0]) ** 2 + (y - c[1] - shift[1]) ** 2 + (z - c[2] - shift[2]) ** 2)
        blobs = np.maximum(blobs, _soft_ball(d - radius))
    mri = brain * (1.0 + 1.0 * blobs)

    gain = 1 + rng.uniform(-0.1, 0.1)
    field = 0.6 + 0.4 * np.exp(-(x ** 2 + y ** 2 + z ** 2) / 0.5)
    amp = 1.0 - (cfg.hypometabolism_delta if label else 0.0)
    for c in HOTSPOT_CENTRES:
        shift = rng.uniform(-cfg.jitter, cfg.jitter, 3)
        d2 = (x - c[0] - shift[0]) ** 2 + (y - c[1] - shift[1]) ** 2 + (z - c[2] - shift[2]) ** 2
        field = field + amp * np.exp(-d2 / (2 * HOTSPOT_WIDTH ** 2))
    pet = brain * field * gain

    if cfg.noise_sigma > 0:
        mri = mri + rng.normal(0, cfg.noise_sigma, mri.shape)
        pet = pet + rng.normal(0, cfg.noise_sigma, pet.shape)
    return mri.astype(np.float32)[None], pet.astype(np.float32)[None]


def synth_generate(cfg: SynthConfig) -> list[VolumePair]:
    """Balanced, seed-reproducible list of subjects."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    labels = np.arange(cfg.n_subjects) % 2
    rng.shuffle(labels)
    subjects = []
    for i, label in enumerate(labels):
        mri, pet = phantom(cfg.volume_size, int(label), cfg, rng)
        subjects.append(VolumePair(f"sub-{i:04d}", mri, pet, int(label)))
    return subjects


def blob_region_mask(s: int) -> np.ndarray:
    """Baseline blob footprint, used by separability checks."""
    x, y, z = _grid(s)
    mask = np.zeros((s, s, s), dtype=bool)
    for c in BLOB_CENTRES:
        mask |= (x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2 <= BLOB_RADIUS ** 2
    return mask
