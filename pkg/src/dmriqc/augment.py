"""Geometric training-set augmentation.

One composed affine per augmented sample: translate, rotate, zoom, shear,
flip, resampled bilinearly with zero fill. Labels pass through untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .validation import check_pixels
from .volume import SliceSample


@dataclass(frozen=True)
class AugmentConfig:
    max_translation: float = 0.1
    max_rotation: float = 15.0
    zoom_range: tuple[float, float] = (0.9, 1.1)
    max_shear: float = 10.0
    allow_hflip: bool = True
    allow_vflip: bool = True
    multiplier: int = 2

    def __post_init__(self):
        lo, hi = self.zoom_range
        if not (0.0 < lo <= hi):
            raise ValueError(f"zoom_range must be positive and ordered, got {self.zoom_range}")
        if not 0.0 <= self.max_rotation < 180.0:
            raise ValueError("max_rotation must be in [0, 180)")
        if self.multiplier < 0:
            raise ValueError("multiplier must be >= 0")


@dataclass(frozen=True)
class AffineParams:
    """One concrete draw of the augmentation transform."""

    translate: tuple[float, float] = (0.0, 0.0)  # pixels (row, col)
    rotation: float = 0.0  # degrees
    zoom: float = 1.0
    shear: float = 0.0  # degrees
    hflip: bool = False
    vflip: bool = False


def draw_params(shape: tuple[int, int], config: AugmentConfig, rng: np.random.Generator) -> AffineParams:
    h, w = shape
    return AffineParams(
        translate=(
            float(rng.uniform(-config.max_translation, config.max_translation) * h),
            float(rng.uniform(-config.max_translation, config.max_translation) * w),
        ),
        rotation=float(rng.uniform(-config.max_rotation, config.max_rotation)),
        zoom=float(rng.uniform(*config.zoom_range)),
        shear=float(rng.uniform(-config.max_shear, config.max_shear)),
        hflip=bool(config.allow_hflip and rng.random() < 0.5),
        vflip=bool(config.allow_vflip and rng.random() < 0.5),
    )


def apply_affine(pixels: np.ndarray, params: AffineParams) -> np.ndarray:
    """Resample ``pixels`` through the composed forward transform."""
    pixels = check_pixels(pixels)
    if params == AffineParams():
        return pixels.copy()
    theta = np.deg2rad(params.rotation)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    zoom = np.diag([params.zoom, params.zoom])
    shear = np.array([[1.0, np.tan(np.deg2rad(params.shear))], [0.0, 1.0]])
    flip = np.diag([-1.0 if params.vflip else 1.0, -1.0 if params.hflip else 1.0])
    fwd = rot @ zoom @ shear @ flip

    center = (np.array(pixels.shape) - 1) / 2.0
    t = np.array(params.translate)
    # output[p] = input[inv(fwd) @ (p - center - t) + center]
    inv = np.linalg.inv(fwd)
    offset = -inv @ (center + t) + center
    return ndimage.affine_transform(pixels, inv, offset=offset, order=1, mode="constant", cval=0.0)


def augment(
    pixels: np.ndarray,
    label: int | None,
    config: AugmentConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, int | None]:
    """One randomly transformed copy; the label is returned unchanged."""
    pixels = check_pixels(pixels)
    params = draw_params(pixels.shape, config, rng)
    return apply_affine(pixels, params), label


def augment_dataset(samples: list[SliceSample], config: AugmentConfig, seed: int = 0) -> list[SliceSample]:
    """Originals plus ``multiplier`` augmented copies per sample.

    Each copy gets a private RNG stream keyed by (seed, sample index, copy
    index), so results do not depend on generation order.
    """
    out = list(samples)
    for idx, sample in enumerate(samples):
        for rep in range(config.multiplier):
            rng = np.random.default_rng([seed, idx, rep])
            pixels, label = augment(sample.pixels, sample.label, config, rng)
            out.append(replace(sample, pixels=pixels, label=label))
    return out
