"""Gaussian weighting matrix and the regularized solve of ``L = P·H + E``."""
from __future__ import annotations

import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from models.processing import GridSpec, SolveOptions
from ssi.errors import InternalConsistencyError, InvalidArgumentError
from ssi.types import HighResImage, Image, LowResStack, ShiftEstimate, ShiftVector, SparseWeightMatrix

logger = logging.getLogger(__name__)

_LAMBDA_FRACTION = 1e-3
_PHASE_TOLERANCE = 0.02


def grid_offsets(estimates: Sequence[ShiftEstimate]) -> List[ShiftVector]:
    """Sampling-grid offsets of each frame relative to the template.

    Registration reports the content translation ``p`` of a frame; its pixel
    ``u`` therefore sits at template coordinate ``u - p``.
    """
    return [ShiftVector(-e.p.p1, -e.p.p2) for e in estimates]


def distinct_phases(values: Sequence[float], tolerance: float = _PHASE_TOLERANCE) -> int:
    """Number of distinct sub-pixel phases (values mod 1), clustering within ``tolerance``."""
    phases = np.sort(np.mod(np.asarray(values, dtype=np.float64), 1.0))
    if phases.size == 0:
        return 0
    gaps = np.diff(phases) > tolerance
    count = 1 + int(np.count_nonzero(gaps))
    if count > 1 and phases[0] + 1.0 - phases[-1] <= tolerance:
        count -= 1
    return count


def check_grid_phases(shifts: Sequence[ShiftVector], grid: GridSpec) -> None:
    horizontal = distinct_phases([s.dx for s in shifts])
    vertical = distinct_phases([s.dy for s in shifts])
    if grid.l1 > horizontal or grid.l2 > vertical:
        raise InvalidArgumentError(
            f"magnification ({grid.l1}, {grid.l2}) exceeds the available shift phases "
            f"({horizontal}, {vertical})"
        )


def map_lr_to_grid(shifts: Sequence[ShiftVector], grid: GridSpec) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Continuous high-res coordinates ``(x, y)`` of every LR pixel, per frame.

    Pixel ``(u, v)`` of frame ``k`` lands on
    ``((u + dx_k)·L1 + (L1 - 1)/2, (v + dy_k)·L2 + (L2 - 1)/2)``; arrays are
    row-major over the LR frame.
    """
    v, u = np.indices((grid.n2, grid.n1), dtype=np.float64)
    coordinates = []
    for s in shifts:
        x = (u + s.dx) * grid.l1 + (grid.l1 - 1) / 2
        y = (v + s.dy) * grid.l2 + (grid.l2 - 1) / 2
        coordinates.append((x.ravel(), y.ravel()))
    return coordinates


def gaussian_weight(distance_squared: np.ndarray, grid: GridSpec, sigma: float) -> np.ndarray:
    """Raw coefficient ``exp(-d² / (2·L1·L2·σ²))``."""
    return np.exp(-distance_squared / (2.0 * grid.l1 * grid.l2 * sigma**2))


def build_weight_matrix(
    shifts: Sequence[ShiftVector], grid: GridSpec, opts: Optional[SolveOptions] = None
) -> SparseWeightMatrix:
    """Gaussian weights between every LR sample and the HR grid points within the radius.

    Rows are ``k·N1·N2 + i`` (frame-major, row-major within a frame), columns
    index the HR grid row-major. Entries are sorted by ``(row, col)``.
    """
    opts = opts or SolveOptions()
    if not shifts:
        raise InvalidArgumentError("at least one frame is needed")
    radius = opts.radius_for(grid.l1, grid.l2)
    reach = int(math.ceil(radius))

    coordinates = map_lr_to_grid(shifts, grid)
    x = np.concatenate([c[0] for c in coordinates])
    y = np.concatenate([c[1] for c in coordinates])
    sample_rows = np.arange(x.shape[0], dtype=np.int64)
    base_x = np.floor(x).astype(np.int64)
    base_y = np.floor(y).astype(np.int64)

    rows, cols, weights = [], [], []
    for oy in range(-reach, reach + 2):
        gy = base_y + oy
        dy2 = (gy - y) ** 2
        for ox in range(-reach, reach + 2):
            gx = base_x + ox
            d2 = (gx - x) ** 2 + dy2
            keep = (
                (d2 <= radius * radius)
                & (gx >= 0) & (gx < grid.hr_width)
                & (gy >= 0) & (gy < grid.hr_height)
            )
            if not np.any(keep):
                continue
            rows.append(sample_rows[keep])
            cols.append(gy[keep] * grid.hr_width + gx[keep])
            weights.append(gaussian_weight(d2[keep], grid, opts.sigma))

    rows = np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.empty(0, dtype=np.int64)
    weights = np.concatenate(weights) if weights else np.empty(0)
    order = np.lexsort((cols, rows))
    matrix = SparseWeightMatrix(
        n_rows=x.shape[0],
        n_cols=grid.hr_size,
        rows=rows[order],
        cols=cols[order],
        weights=weights[order],
        sigma=opts.sigma,
        truncation_radius=radius,
    )
    empty = np.flatnonzero(matrix.row_sums == 0)
    if empty.size:
        raise InternalConsistencyError(
            f"{empty.size} samples have no grid point within radius {radius:.3g} "
            f"(first row {int(empty[0])})"
        )
    logger.info(
        "weight matrix %dx%d with %d entries (σ=%.3g, radius=%.3g)",
        matrix.n_rows, matrix.n_cols, matrix.nnz, opts.sigma, radius,
    )
    return matrix


def assemble_system(
    stack: LowResStack,
    shifts: Sequence[ShiftVector],
    grid: GridSpec,
    opts: Optional[SolveOptions] = None,
) -> Tuple[np.ndarray, SparseWeightMatrix]:
    """Stack all frames into ``L`` (frame-major, row-major) and build the matching ``P``."""
    if len(shifts) != len(stack):
        raise InvalidArgumentError(f"{len(shifts)} shifts for {len(stack)} frames")
    if stack.frames[0].shape != (grid.n2, grid.n1):
        raise InvalidArgumentError(
            f"frames are {stack.frames[0].shape}, grid expects {(grid.n2, grid.n1)}"
        )
    check_grid_phases(shifts, grid)
    lowres = np.concatenate([frame.pixels.ravel() for frame in stack.frames])
    return lowres, build_weight_matrix(shifts, grid, opts)


def default_lambda(p_matrix) -> float:
    """``1e-3`` times the mean row sum of ``PᵀP``."""
    ones = np.ones(p_matrix.shape[1])
    return _LAMBDA_FRACTION * float(np.mean(p_matrix.T @ (p_matrix @ ones)))


def solve_high_res(
    lowres: np.ndarray,
    weights: SparseWeightMatrix,
    grid: GridSpec,
    opts: Optional[SolveOptions] = None,
    initial: Optional[np.ndarray] = None,
    pixel_pitch: float = 1.0,
) -> HighResImage:
    """Conjugate gradients on ``(PᵀP + λI) H = PᵀL``.

    Non-convergence is reported in the diagnostics, not raised.
    """
    opts = opts or SolveOptions()
    if lowres.shape != (weights.n_rows,) or weights.n_cols != grid.hr_size:
        raise InvalidArgumentError(
            f"system mismatch: L has {lowres.shape}, P is {weights.n_rows}x{weights.n_cols}, "
            f"grid has {grid.hr_size} unknowns"
        )
    p_matrix = weights.to_csr(normalized=True)
    p_transpose = p_matrix.T.tocsr()
    lam = default_lambda(p_matrix) if opts.lambda_reg is None else opts.lambda_reg

    normal = LinearOperator(
        (grid.hr_size, grid.hr_size),
        matvec=lambda h: p_transpose @ (p_matrix @ h) + lam * h,
        dtype=np.float64,
    )
    rhs = p_transpose @ lowres
    x0 = np.zeros(grid.hr_size) if initial is None else np.asarray(initial, dtype=np.float64).ravel()

    iterations = 0

    def count(_: np.ndarray) -> None:
        nonlocal iterations
        iterations += 1

    solution, info = cg(
        normal, rhs, x0=x0, rtol=opts.cg_tolerance, atol=0.0,
        maxiter=opts.cg_max_iterations, callback=count,
    )
    rhs_norm = float(np.linalg.norm(rhs))
    residual = float(np.linalg.norm(rhs - normal.matvec(solution)))
    relative = residual / rhs_norm if rhs_norm > 0 else residual
    converged = info == 0
    if not converged:
        logger.warning(
            "CG stopped after %d iterations with relative residual %.3g", iterations, relative
        )
    logger.info("solved %d unknowns (λ=%.3g) in %d CG iterations", grid.hr_size, lam, iterations)
    image = Image(solution.reshape(grid.hr_height, grid.hr_width), pixel_pitch=pixel_pitch)
    return HighResImage(
        image=image, iterations=iterations, relative_residual=relative, converged=converged,
        lambda_reg=lam,
    )
