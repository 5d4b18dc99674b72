"""Image quality measures and single-frame upsampling baselines."""
from __future__ import annotations

import math
from typing import Tuple

import numpy as np
from scipy import ndimage

from models.target import BarOrientation, BarTargetSpec
from ssi.errors import InvalidArgumentError
from ssi.targets import centerlines
from ssi.types import Image

# Michelson contrast at or above this counts as resolved.
RESOLVED_CONTRAST = 0.2


def psnr(a: Image, b: Image, peak: float = 1.0) -> float:
    """``10·log10(peak² / MSE)``; identical images give ``inf``."""
    if a.shape != b.shape:
        raise InvalidArgumentError(f"cannot compare {a.shape} with {b.shape}")
    if peak <= 0:
        raise InvalidArgumentError(f"peak must be positive, got {peak}")
    mse = float(np.mean((a.pixels - b.pixels) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak**2 / mse)


def log_spectrum(img: Image) -> Image:
    """Centred ``ln(1 + |F|)`` of the 2D DFT, scaled to ``[0, 1]``."""
    magnitude = np.log1p(np.abs(np.fft.fftshift(np.fft.fft2(img.pixels))))
    low, high = magnitude.min(), magnitude.max()
    if high > low:
        magnitude = (magnitude - low) / (high - low)
    else:
        magnitude = np.zeros_like(magnitude)
    return Image(magnitude)


def resolved_contrast(
    img: Image,
    spec: BarTargetSpec,
    group_index: int,
    offset: Tuple[float, float] = (0.0, 0.0),
) -> float:
    """Michelson contrast of one group sampled on its bar and gap centrelines.

    ``img`` may be the target size scaled by any factor (e.g. a low-res frame);
    ``offset`` is the known ``(dx, dy)`` translation of the image content
    relative to the target, in target pixels.
    """
    if not 0 <= group_index < len(spec.groups):
        raise InvalidArgumentError(
            f"group {group_index} does not exist ({len(spec.groups)} groups)"
        )
    scale = img.width / spec.side
    if not math.isclose(img.height / spec.side, scale):
        raise InvalidArgumentError(
            f"{img.height}x{img.width} image is not a scaled copy of the {spec.side}px target"
        )
    group = spec.groups[group_index]
    bright, dark, across = centerlines(group)
    along_offset, across_offset = offset if group.orientation is BarOrientation.VERTICAL \
        else offset[::-1]

    def sample(along: np.ndarray) -> float:
        a, c = np.meshgrid(
            (along + along_offset + 0.5) * scale - 0.5,
            (across + across_offset + 0.5) * scale - 0.5,
        )
        coords = [c.ravel(), a.ravel()] if group.orientation is BarOrientation.VERTICAL \
            else [a.ravel(), c.ravel()]
        return float(ndimage.map_coordinates(img.pixels, coords, order=1, mode="nearest").mean())

    bright_mean, dark_mean = sample(bright), sample(dark)
    total = bright_mean + dark_mean
    if total <= 0:
        return 0.0
    return float(np.clip((bright_mean - dark_mean) / total, 0.0, 1.0))


def upsample_nearest(img: Image, l1: int, l2: int) -> Image:
    """Each pixel repeated ``l2`` times down and ``l1`` times across."""
    pixels = np.repeat(np.repeat(img.pixels, l2, axis=0), l1, axis=1)
    return Image(pixels, pixel_pitch=img.pixel_pitch / max(l1, l2))


def upsample_interpolated(img: Image, l1: int, l2: int, order: int = 3) -> Image:
    """Spline interpolation onto the ``l1 x l2`` finer grid (pixel areas aligned)."""
    pixels = ndimage.zoom(img.pixels, (l2, l1), order=order, mode="nearest", grid_mode=True)
    return Image(pixels, pixel_pitch=img.pixel_pitch / max(l1, l2))
