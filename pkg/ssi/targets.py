"""Synthetic bar targets standing in for a USAF resolution chart."""
from __future__ import annotations

import math
from typing import Optional, Sequence, Tuple

import numpy as np

from models.target import BarGroup, BarOrientation, BarTargetSpec
from ssi.errors import InvalidArgumentError
from ssi.types import Image

SUPERSAMPLING = 4

# (period in LR pixels, orientation, bar count). The finest groups sit beyond
# the single-frame Nyquist limit; eight bars make the aliased component cancel
# when sampled at the true bar centres.
DEFAULT_GROUPS: Tuple[Tuple[float, BarOrientation, int], ...] = (
    (1.25, BarOrientation.VERTICAL, 8),
    (1.25, BarOrientation.HORIZONTAL, 8),
    (2.0, BarOrientation.VERTICAL, 5),
    (3.0, BarOrientation.HORIZONTAL, 3),
    (4.0, BarOrientation.VERTICAL, 3),
    (6.0, BarOrientation.HORIZONTAL, 2),
)
_MARGIN_LR = 4
_GAP_LR = 1


def _coverage(positions: np.ndarray, origin: float, group: BarGroup) -> np.ndarray:
    relative = positions - origin
    index = np.floor(relative / group.period)
    bright = (
        (relative >= 0)
        & (index < group.bar_count)
        & (relative - index * group.period < group.period / 2)
    )
    return bright.mean(axis=-1)


def generate_bar_target(spec: BarTargetSpec) -> Image:
    """Render every group with 4x supersampled box anti-aliasing."""
    pixels = np.full((spec.side, spec.side), spec.background, dtype=np.float64)
    offsets = (np.arange(SUPERSAMPLING) + 0.5) / SUPERSAMPLING
    for group in spec.groups:
        vertical = group.orientation is BarOrientation.VERTICAL
        count = group.width if vertical else group.height
        start = group.x if vertical else group.y
        positions = (start + np.arange(count))[:, None] + offsets[None, :]
        profile = _coverage(positions, start, group)
        values = spec.background + (spec.foreground - spec.background) * profile
        block = np.broadcast_to(values[None, :], (group.height, group.width)) if vertical \
            else np.broadcast_to(values[:, None], (group.height, group.width))
        pixels[group.y:group.y + group.height, group.x:group.x + group.width] = block
    return Image(pixels)


def centerlines(group: BarGroup) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bright-bar centres, dark-gap centres (pixel-centre coordinates along the
    varying axis) and the across-axis pixel positions sampled (middle half)."""
    origin = group.x if group.orientation is BarOrientation.VERTICAL else group.y
    bars = np.arange(group.bar_count)
    bright = origin + bars * group.period + group.period / 4 - 0.5
    dark = origin + bars[:-1] * group.period + 3 * group.period / 4 - 0.5
    if group.orientation is BarOrientation.VERTICAL:
        start, length = group.y, group.height
    else:
        start, length = group.x, group.width
    across = np.arange(start + length // 4, start + length - length // 4, dtype=np.float64)
    return bright, dark, across


def _cell_size(groups: Sequence[Tuple[float, BarOrientation, int]]) -> int:
    extent = max((count - 0.5) * period for period, _, count in groups)
    return int(math.ceil(extent)) + 2 * _GAP_LR


def standard_target(
    lr_side: int,
    oversample: int,
    groups: Optional[Sequence[Tuple[float, BarOrientation, int]]] = None,
) -> BarTargetSpec:
    """Bar target on a ``lr_side·oversample`` canvas with LR-aligned group cells.

    Periods are given in low-res pixels and scaled by ``oversample``. Without
    ``groups``, as many of ``DEFAULT_GROUPS`` as fit are placed, finest first.
    """
    if groups is None:
        cell = _cell_size(DEFAULT_GROUPS)
        usable = max(lr_side - 2 * _MARGIN_LR, 0) // cell
        groups = DEFAULT_GROUPS[: usable * usable]
        if not groups:
            raise InvalidArgumentError(f"no bar group fits a {lr_side} px side")
    cell = _cell_size(groups)
    columns = (lr_side - 2 * _MARGIN_LR) // cell
    rows = math.ceil(len(groups) / columns) if columns > 0 else math.inf
    if columns < 1 or 2 * _MARGIN_LR + rows * cell > lr_side:
        raise InvalidArgumentError(
            f"{len(groups)} groups of {cell} LR px cells do not fit a {lr_side} px side"
        )
    placed = []
    for index, (period, orientation, count) in enumerate(groups):
        row, col = divmod(index, columns)
        placed.append(
            BarGroup(
                period=period * oversample,
                orientation=orientation,
                bar_count=count,
                x=(_MARGIN_LR + col * cell + _GAP_LR) * oversample,
                y=(_MARGIN_LR + row * cell + _GAP_LR) * oversample,
                width=(cell - 2 * _GAP_LR) * oversample,
                height=(cell - 2 * _GAP_LR) * oversample,
            )
        )
    return BarTargetSpec(side=lr_side * oversample, groups=placed)
