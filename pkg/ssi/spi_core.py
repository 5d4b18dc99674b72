"""Hadamard-basis single-pixel imaging: patterns, measurements, inverse."""
from __future__ import annotations

import logging
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.linalg import hadamard

from models.acquisition import NoiseKind, NoiseModel, PatternScheme
from ssi.errors import InvalidArgumentError
from ssi.types import HadamardMatrix, Image, MeasurementVector, PatternSet

logger = logging.getLogger(__name__)

# Patterns are multiplied against the scene in blocks of this many rows so the
# float64 copy of a block stays small for 64x64 bases (8192 patterns).
_PATTERN_CHUNK = 512


def _check_power_of_two(value: int, name: str) -> None:
    if not isinstance(value, (int, np.integer)) or value < 1 or value & (value - 1):
        raise InvalidArgumentError(f"{name} must be a positive power of two, got {value!r}")


@lru_cache(maxsize=8)
def _sylvester(order: int) -> np.ndarray:
    entries = hadamard(order, dtype=np.int8)
    entries.setflags(write=False)
    return entries


def hadamard_matrix(order: int) -> HadamardMatrix:
    """Sylvester-ordered Hadamard matrix of the given order."""
    _check_power_of_two(order, "order")
    return HadamardMatrix(order=int(order), entries=_sylvester(int(order)))


def generate_patterns(
    basis_side: int, scheme: PatternScheme = PatternScheme.DIFFERENTIAL_PAIRS
) -> PatternSet:
    """Reshape each Hadamard row into an ``N x N`` mask.

    Differential pairs interleave ``P+ = (1 + h)/2`` and ``P- = (1 - h)/2``.
    """
    _check_power_of_two(basis_side, "basis_side")
    n = int(basis_side)
    rows = hadamard_matrix(n * n).entries
    if scheme is PatternScheme.RAW_BIPOLAR:
        patterns = rows.reshape(n * n, n, n).copy()
    else:
        positive = ((1 + rows.astype(np.int16)) // 2).astype(np.uint8)
        patterns = np.empty((2 * n * n, n * n), dtype=np.uint8)
        patterns[0::2] = positive
        patterns[1::2] = 1 - positive
        patterns = patterns.reshape(2 * n * n, n, n)
    logger.debug("generated %d %s patterns of side %d", patterns.shape[0], scheme.value, n)
    return PatternSet(basis_side=n, scheme=scheme, patterns=patterns)


def _bipolar_rms(values: np.ndarray, scheme: PatternScheme) -> float:
    bipolar = values[0::2] - values[1::2] if scheme is PatternScheme.DIFFERENTIAL_PAIRS else values
    return float(np.sqrt(np.mean(bipolar**2)))


def apply_noise(
    values: np.ndarray,
    scheme: PatternScheme,
    noise: NoiseModel,
    rng: Optional[np.random.Generator],
) -> np.ndarray:
    """Add noise to every reading.

    Reading ``k`` draws only from the ``k``-th child of ``rng``, so its noise
    does not depend on how many readings precede it.
    """
    if noise.kind is NoiseKind.NONE:
        return values
    if rng is None:
        raise InvalidArgumentError(f"{noise.kind.value} noise needs a seeded generator")
    if noise.kind is NoiseKind.GAUSSIAN:
        if noise.sigma is not None:
            sigma = noise.sigma
        else:
            # σ of the bipolar coefficient, split over the readings that form it.
            sigma = _bipolar_rms(values, scheme) / 10 ** (noise.snr_db / 20)
            if scheme is PatternScheme.DIFFERENTIAL_PAIRS:
                sigma /= np.sqrt(2.0)
        draws = np.array([child.standard_normal() for child in rng.spawn(values.size)])
        return values + sigma * draws.reshape(values.shape)
    if np.any(values < 0):
        raise InvalidArgumentError("poisson noise needs nonnegative readings (use differential_pairs)")
    counts = [child.poisson(v * noise.scale) for child, v in zip(rng.spawn(values.size), values.ravel())]
    return np.asarray(counts, dtype=np.float64).reshape(values.shape) / noise.scale


def simulate_measurements(
    scene: Image,
    patterns: PatternSet,
    noise: Optional[NoiseModel] = None,
    rng: Optional[np.random.Generator] = None,
) -> MeasurementVector:
    """Detector readings ``m_k = Σ pattern_k · scene`` plus noise."""
    n = patterns.basis_side
    if scene.shape != (n, n):
        raise InvalidArgumentError(
            f"scene is {scene.height}x{scene.width}, patterns expect {n}x{n}"
        )
    if scene.pixels.min() < 0:
        raise InvalidArgumentError(f"scene pixels must be nonnegative, got minimum {scene.pixels.min():.3g}")
    flat_scene = scene.pixels.ravel()
    flat_patterns = patterns.patterns.reshape(len(patterns), n * n)
    values = np.empty(len(patterns), dtype=np.float64)
    for start in range(0, len(patterns), _PATTERN_CHUNK):
        block = flat_patterns[start:start + _PATTERN_CHUNK].astype(np.float64)
        values[start:start + _PATTERN_CHUNK] = block @ flat_scene
    values = apply_noise(values, patterns.scheme, noise or NoiseModel(), rng)
    return MeasurementVector(values=values, scheme=patterns.scheme, basis_side=n)


def fwht(values: np.ndarray) -> np.ndarray:
    """Sylvester-ordered fast Walsh-Hadamard transform (unnormalized), ``H @ values``."""
    out = np.array(values, dtype=np.float64)
    size = out.shape[0]
    _check_power_of_two(size, "transform length")
    half = 1
    while half < size:
        blocks = out.reshape(-1, 2, half)
        out = np.stack((blocks[:, 0] + blocks[:, 1], blocks[:, 0] - blocks[:, 1]), axis=1).reshape(size)
        half *= 2
    return out


def bipolar_coefficients(m: MeasurementVector) -> np.ndarray:
    n2 = m.basis_side * m.basis_side
    expected = 2 * n2 if m.scheme is PatternScheme.DIFFERENTIAL_PAIRS else n2
    if m.values.ndim != 1 or m.values.shape[0] != expected:
        raise InvalidArgumentError(
            f"{m.scheme.value} measurements for N={m.basis_side} need {expected} values, "
            f"got {m.values.shape}"
        )
    if m.scheme is PatternScheme.DIFFERENTIAL_PAIRS:
        return m.values[0::2] - m.values[1::2]
    return m.values


def reconstruct_image(m: MeasurementVector, pixel_pitch: float = 1.0) -> Image:
    """Exact inverse: ``(1/N²) · Hᵀ · d`` reshaped ``N x N``."""
    _check_power_of_two(m.basis_side, "basis_side")
    coefficients = bipolar_coefficients(m)
    n = m.basis_side
    # Sylvester matrices are symmetric, so Hᵀ d is the forward transform.
    pixels = fwht(coefficients) / (n * n)
    return Image(pixels.reshape(n, n), pixel_pitch=pixel_pitch)
