"""Intensity preprocessing variants and interpolation-free augmentation.

The ablation family from the training recipe: keep the raw integers,
keep only the 8 least significant bits, robust-scale to [0, 255], or
blank the head and keep the background.  Augmentation is restricted to
intensity scaling and axis flips so no voxel is ever interpolated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError
from .io import Volume

__all__ = ["AugmentConfig", "augment", "lsb8", "mask_background", "robust_scale"]


@dataclass(frozen=True)
class AugmentConfig:
    """Augmentation parameters; draws are pure functions of (seed, index)."""

    intensity_range: tuple = (0.9, 1.1)
    flip_probability: float = 0.30
    seed: int = 0

    def __post_init__(self):
        low, high = self.intensity_range
        if not (0.0 < low <= high):
            raise ConfigError(
                "bad_intensity_range", f"need 0 < low <= high, got {self.intensity_range!r}"
            )
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ConfigError(
                "bad_flip_probability",
                f"flip probability must be in [0, 1], got {self.flip_probability!r}",
            )
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ConfigError("bad_seed", f"seed must be a nonnegative integer, got {self.seed!r}")


def lsb8(volume: Volume) -> Volume:
    """Keep only the 8 least significant bits of every intensity."""
    return volume.with_data(volume.data % 256)


def robust_scale(volume: Volume) -> Volume:
    """Clamp above the 80th percentile of nonzero voxels, rescale to [0, 255].

    The percentile is nearest-rank on the sorted nonzero intensities, so
    20% of the brightest voxels saturate.  Zero stays zero.
    """
    nonzero = np.sort(volume.data[volume.data > 0], kind="stable")
    if nonzero.size == 0:
        raise DomainError("degenerate_input", "robust scaling needs at least one nonzero voxel")
    rank = int(np.ceil(0.8 * nonzero.size))
    robust_max = float(nonzero[rank - 1])
    scaled = volume.data.astype(np.float64) * (255.0 / robust_max)
    return volume.with_data(np.rint(np.minimum(scaled, 255.0)).astype(np.uint16))


def mask_background(volume: Volume, head_mask: Volume) -> Volume:
    """Zero the voxels flagged by the head mask, keeping the background."""
    if head_mask.dims != volume.dims:
        raise DomainError(
            "shape_mismatch",
            f"mask dims {head_mask.dims} do not match volume dims {volume.dims}",
        )
    mask = head_mask.data
    if mask.max() > 1:
        raise DomainError("bad_mask", "head mask must contain only 0 and 1")
    return volume.with_data(np.where(mask == 1, 0, volume.data))


def augment(volume: Volume, cfg: AugmentConfig, draw_index: int) -> Volume:
    """Random intensity scale and per-axis flips, fully reproducible.

    The random state is derived from (cfg.seed, draw_index) alone, so a
    given sample index always sees the same augmentation regardless of
    batch composition or worker order.  Intensities are multiplied by a
    scale drawn from ``intensity_range``, rounded back to integers, and
    clamped to the uint16 range; each axis is then reversed independently
    with ``flip_probability``.  No interpolation anywhere.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, int(draw_index)]))
    low, high = cfg.intensity_range
    scale = rng.uniform(low, high)
    flips = rng.random(3) < cfg.flip_probability
    data = np.rint(volume.data.astype(np.float64) * scale)
    data = np.clip(data, 0, 65535).astype(np.uint16)
    for axis in range(3):
        if flips[axis]:
            data = np.flip(data, axis=axis)
    return volume.with_data(data)
