"""Geometry of the synthetic sampling system and the low-res stack simulator.

Each detector of the array acts, by reciprocity, as an off-axis source; with the
specimen defocused by ``z2`` its image is translated by
``S_image = M · S_offset · z2 / z1``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy import ndimage

from models.acquisition import SpiOptions
from models.geometry import DetectorArray, OpticalGeometry
from ssi import spi_core
from ssi.errors import InvalidArgumentError
from ssi.types import Image, LowResStack, ShiftVector

logger = logging.getLogger(__name__)

_UM_PER_MM = 1000.0


@dataclass(frozen=True)
class CutoffFrequencies:
    illumination: float  # μm⁻¹, NA / λ
    modulator: float     # μm⁻¹, M / e

    @property
    def undersampled(self) -> bool:
        return self.modulator < self.illumination


def _check_geometry(geom: OpticalGeometry) -> None:
    if geom.z1 <= 0:
        raise InvalidArgumentError(f"z1 must be positive, got {geom.z1}")


def image_shift_um(geom: OpticalGeometry, lateral_offset: float) -> float:
    """Image-plane shift in μm for a detector ``lateral_offset`` mm off axis."""
    _check_geometry(geom)
    return geom.magnification * lateral_offset * (geom.z2 / geom.z1) * _UM_PER_MM


def shift_from_geometry(geom: OpticalGeometry, lateral_offset: float) -> float:
    """Same shift expressed in low-res pixels."""
    return image_shift_um(geom, lateral_offset) / geom.lr_pixel_pitch


def pitch_for_shift(geom: OpticalGeometry, shift_px: float) -> float:
    """Detector pitch (mm) giving an image shift of ``shift_px`` low-res pixels."""
    _check_geometry(geom)
    if geom.z2 == 0:
        raise InvalidArgumentError("an in-focus specimen (z2 = 0) produces no shift")
    return shift_px * geom.lr_pixel_pitch * geom.z1 / (geom.magnification * geom.z2 * _UM_PER_MM)


def array_shifts(geom: OpticalGeometry, array: DetectorArray) -> List[ShiftVector]:
    """One shift per detector, row-major, offsets measured from the array centre."""
    shifts = []
    for row in range(array.rows):
        for col in range(array.cols):
            offset_x = (col - (array.cols - 1) / 2) * array.pitch
            offset_y = (row - (array.rows - 1) / 2) * array.pitch
            shifts.append(
                ShiftVector(
                    shift_from_geometry(geom, offset_x),
                    shift_from_geometry(geom, offset_y),
                )
            )
    return shifts


def depth_of_field(geom: OpticalGeometry) -> float:
    """Depth of field in μm: ``λ/NA² + e/(M·NA)``."""
    return geom.wavelength / geom.na**2 + geom.encoding_pixel / (geom.magnification * geom.na)


def within_depth_of_field(geom: OpticalGeometry) -> bool:
    return abs(geom.z2) * _UM_PER_MM <= depth_of_field(geom)


def cutoff_frequencies(geom: OpticalGeometry) -> CutoffFrequencies:
    return CutoffFrequencies(
        illumination=geom.na / geom.wavelength,
        modulator=geom.magnification / geom.encoding_pixel,
    )


def downsample_box(img: Image, factor: int) -> Image:
    """Mean over ``factor x factor`` blocks; pixel pitch grows by ``factor``."""
    if factor < 1:
        raise InvalidArgumentError(f"factor must be >= 1, got {factor}")
    height, width = img.shape
    if height % factor or width % factor:
        raise InvalidArgumentError(f"{height}x{width} image is not divisible by {factor}")
    blocks = img.pixels.reshape(height // factor, factor, width // factor, factor)
    return Image(blocks.mean(axis=(1, 3)), pixel_pitch=img.pixel_pitch * factor)


def warp_subpixel(img: Image, s: ShiftVector) -> Image:
    """Translate content by ``(dx, dy)``: ``out(x, y) = img(x - dx, y - dy)``.

    Bilinear interpolation, replicated border.
    """
    if s.dx == 0 and s.dy == 0:
        return img.with_pixels(img.pixels.copy())
    rows, cols = np.indices(img.shape, dtype=np.float64)
    warped = ndimage.map_coordinates(
        img.pixels, [rows - s.dy, cols - s.dx], order=1, mode="nearest"
    )
    return img.with_pixels(warped)


def simulate_lowres_stack(
    scene_hr: Image,
    geom: OpticalGeometry,
    array: DetectorArray,
    spi_opts: SpiOptions,
    rng: Optional[np.random.Generator] = None,
    template_index: int = 0,
) -> LowResStack:
    """Frames one detector per array element would retrieve.

    The scene is translated on its own grid, box-binned to ``basis_side``, and
    optionally passed through Hadamard measurement and reconstruction. Noise
    for frame ``k`` comes from the ``k``-th child of ``rng``.
    """
    side = spi_opts.basis_side
    if scene_hr.height != scene_hr.width or scene_hr.width % side:
        raise InvalidArgumentError(
            f"scene {scene_hr.height}x{scene_hr.width} is not a square multiple of {side}"
        )
    factor = scene_hr.width // side
    if not within_depth_of_field(geom):
        logger.warning(
            "defocus %.1f μm exceeds the %.1f μm depth of field; frames would blur",
            abs(geom.z2) * _UM_PER_MM,
            depth_of_field(geom),
        )

    shifts = array_shifts(geom, array)
    patterns = spi_core.generate_patterns(side, spi_opts.scheme) if spi_opts.through_spi else None
    frame_rngs = rng.spawn(len(shifts)) if rng is not None else [None] * len(shifts)

    frames = []
    for index, (shift, frame_rng) in enumerate(zip(shifts, frame_rngs)):
        moved = warp_subpixel(scene_hr, shift.scaled(factor))
        frame = downsample_box(moved, factor)
        if patterns is not None:
            m = spi_core.simulate_measurements(frame, patterns, spi_opts.noise, frame_rng)
            frame = spi_core.reconstruct_image(m, pixel_pitch=frame.pixel_pitch)
        frames.append(frame)
        logger.debug("frame %d shifted by (%.4f, %.4f) px", index, shift.dx, shift.dy)

    logger.info(
        "simulated %d frames of %dx%d (oversample %d, through_spi=%s)",
        len(frames), side, side, factor, spi_opts.through_spi,
    )
    return LowResStack(frames=frames, true_shifts=shifts, template_index=template_index)
