"""Array-backed domain types.

Configuration-like types live in ``models`` as pydantic models; the types here
carry numpy arrays and are plain dataclasses.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from models.acquisition import PatternScheme
from ssi.errors import InvalidArgumentError


@dataclass
class Image:
    """2D real raster, row-major: ``pixels[row, col]`` (``row`` = y, ``col`` = x)."""

    pixels: np.ndarray
    pixel_pitch: float = 1.0  # μm, metadata only

    def __post_init__(self) -> None:
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2 or self.pixels.size == 0:
            raise InvalidArgumentError(
                f"image pixels must be a non-empty 2D array, got shape {self.pixels.shape}"
            )
        if not np.all(np.isfinite(self.pixels)):
            raise InvalidArgumentError("image pixels must be finite")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def with_pixels(self, pixels: np.ndarray) -> Image:
        return Image(pixels, pixel_pitch=self.pixel_pitch)


@dataclass(frozen=True)
class HadamardMatrix:
    order: int
    entries: np.ndarray  # int8, values in {+1, -1}


@dataclass(frozen=True)
class PatternSet:
    """Illumination patterns stacked as ``patterns[k]`` (shape ``(K, N, N)``).

    Differential pairs are stored as uint8 {0, 1}; raw bipolar as int8 {+1, -1}.
    """

    basis_side: int
    scheme: PatternScheme
    patterns: np.ndarray

    def __len__(self) -> int:
        return self.patterns.shape[0]


@dataclass(frozen=True)
class MeasurementVector:
    values: np.ndarray
    scheme: PatternScheme
    basis_side: int

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class ShiftVector:
    """Translation in low-res pixel units (``dx`` along columns, ``dy`` along rows)."""

    dx: float
    dy: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.dx) and np.isfinite(self.dy)):
            raise InvalidArgumentError(f"shift must be finite, got ({self.dx}, {self.dy})")

    def __sub__(self, other: ShiftVector) -> ShiftVector:
        return ShiftVector(self.dx - other.dx, self.dy - other.dy)

    def scaled(self, factor: float) -> ShiftVector:
        return ShiftVector(self.dx * factor, self.dy * factor)


@dataclass
class LowResStack:
    frames: List[Image]
    true_shifts: Optional[List[ShiftVector]] = None
    template_index: int = 0

    def __post_init__(self) -> None:
        if not self.frames:
            raise InvalidArgumentError("a stack needs at least one frame")
        shape = self.frames[0].shape
        if any(f.shape != shape for f in self.frames):
            raise InvalidArgumentError("all frames of a stack must share dimensions")
        if self.true_shifts is not None and len(self.true_shifts) != len(self.frames):
            raise InvalidArgumentError(
                f"{len(self.true_shifts)} true shifts for {len(self.frames)} frames"
            )
        if not 0 <= self.template_index < len(self.frames):
            raise InvalidArgumentError(
                f"template_index {self.template_index} out of range for {len(self.frames)} frames"
            )

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def template(self) -> Image:
        return self.frames[self.template_index]


@dataclass(frozen=True)
class WarpParams:
    p1: float = 0.0
    p2: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.p1, self.p2], dtype=np.float64)

    @classmethod
    def from_array(cls, p: np.ndarray) -> WarpParams:
        return cls(float(p[0]), float(p[1]))


@dataclass(frozen=True)
class ShiftEstimate:
    p: WarpParams
    iterations: int
    final_update_norm: float
    converged: bool
    final_objective: float


@dataclass(frozen=True)
class GradientField:
    gx: np.ndarray
    gy: np.ndarray


@dataclass
class SparseWeightMatrix:
    """Coordinate-form weighting matrix.

    ``weights`` are the raw Gaussian coefficients; ``row_sums`` lets callers
    obtain the unit-row-sum matrix actually used by the solver.
    """

    n_rows: int
    n_cols: int
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray
    sigma: float
    truncation_radius: float
    row_sums: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.row_sums = np.bincount(self.rows, weights=self.weights, minlength=self.n_rows)

    @property
    def nnz(self) -> int:
        return int(self.weights.shape[0])

    def normalized_weights(self) -> np.ndarray:
        return self.weights / self.row_sums[self.rows]

    def to_csr(self, normalized: bool = True):
        from scipy import sparse

        data = self.normalized_weights() if normalized else self.weights
        return sparse.csr_matrix(
            (data, (self.rows, self.cols)), shape=(self.n_rows, self.n_cols)
        )


@dataclass(frozen=True)
class HighResImage:
    image: Image
    iterations: int
    relative_residual: float
    converged: bool
    lambda_reg: float = 0.0
