"""Bit-exact readers and writers for images, tables and digests.

Two image formats are supported: the lossless SSIF float stream and a 16-bit
PGM whose intensity window lives in a ``<file>.range.json`` sidecar.
"""
from __future__ import annotations

import csv
import hashlib
import logging
import struct
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from models.report import ImageRange
from ssi.errors import InvalidArgumentError
from ssi.types import Image, MeasurementVector, ShiftEstimate, ShiftVector, SparseWeightMatrix

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SSIF_MAGIC = b"SSIF"
_SSIF_HEADER = struct.Struct("<4sIII")
_PGM_MAXVAL = 65535


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


# ─────────────────────────────────────────────
# SSIF
# ─────────────────────────────────────────────


def write_ssif(path: PathLike, img: Image) -> Path:
    """Header ``SSIF, u32 width, u32 height, u32 0`` then float32 LE, row-major."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _SSIF_HEADER.pack(SSIF_MAGIC, img.width, img.height, 0)
    body = np.ascontiguousarray(img.pixels, dtype="<f4").tobytes()
    path.write_bytes(header + body)
    return path


def read_ssif(path: PathLike, pixel_pitch: float = 1.0) -> Image:
    data = Path(path).read_bytes()
    if len(data) < _SSIF_HEADER.size:
        raise InvalidArgumentError(f"{path}: truncated SSIF header")
    magic, width, height, reserved = _SSIF_HEADER.unpack_from(data)
    if magic != SSIF_MAGIC or reserved != 0:
        raise InvalidArgumentError(f"{path}: not an SSIF file")
    expected = _SSIF_HEADER.size + 4 * width * height
    if len(data) != expected or width == 0 or height == 0:
        raise InvalidArgumentError(
            f"{path}: {len(data)} bytes, expected {expected} for {width}x{height}"
        )
    pixels = np.frombuffer(data, dtype="<f4", offset=_SSIF_HEADER.size).reshape(height, width)
    return Image(pixels.astype(np.float64), pixel_pitch=pixel_pitch)


# ─────────────────────────────────────────────
# 16-bit PGM with range sidecar
# ─────────────────────────────────────────────


def range_sidecar(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".range.json")


def quantize(pixels: np.ndarray, window: ImageRange) -> np.ndarray:
    span = window.hi - window.lo
    if span <= 0:
        return np.zeros(pixels.shape, dtype=np.uint16)
    scaled = np.rint((pixels - window.lo) / span * _PGM_MAXVAL)
    return np.clip(scaled, 0, _PGM_MAXVAL).astype(np.uint16)


def dequantize(samples: np.ndarray, window: ImageRange) -> np.ndarray:
    return window.lo + samples.astype(np.float64) / _PGM_MAXVAL * (window.hi - window.lo)


def write_pgm16(
    path: PathLike, img: Image, window: Optional[ImageRange] = None
) -> Tuple[Path, Path]:
    """Binary PGM, maxval 65535, big-endian samples; returns ``(pgm, sidecar)``.

    Without ``window`` the image's own min/max is used.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if window is None:
        window = ImageRange(lo=float(img.pixels.min()), hi=float(img.pixels.max()))
    samples = quantize(img.pixels, window)
    header = f"P5\n{img.width} {img.height}\n{_PGM_MAXVAL}\n".encode("ascii")
    path.write_bytes(header + samples.astype(">u2").tobytes())
    sidecar = range_sidecar(path)
    sidecar.write_text(window.model_dump_json() + "\n")
    return path, sidecar


def _pgm_header(data: bytes, path: PathLike) -> Tuple[int, int, int, int]:
    tokens: List[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise InvalidArgumentError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise InvalidArgumentError(f"{path}: not a binary PGM")
    width, height, maxval = (int(t) for t in tokens[1:])
    # exactly one whitespace byte separates the header from the raster
    return width, height, maxval, pos + 1


def read_pgm16(path: PathLike, pixel_pitch: float = 1.0) -> Image:
    """Samples mapped back through the sidecar window."""
    data = Path(path).read_bytes()
    width, height, maxval, offset = _pgm_header(data, path)
    if maxval != _PGM_MAXVAL:
        raise InvalidArgumentError(f"{path}: expected maxval {_PGM_MAXVAL}, got {maxval}")
    if len(data) - offset != 2 * width * height:
        raise InvalidArgumentError(f"{path}: raster size does not match {width}x{height}")
    samples = np.frombuffer(data, dtype=">u2", offset=offset).reshape(height, width)
    window = ImageRange.model_validate_json(range_sidecar(path).read_text())
    return Image(dequantize(samples, window), pixel_pitch=pixel_pitch)


def read_image(path: PathLike, pixel_pitch: float = 1.0) -> Image:
    """Dispatch on the suffix: ``.ssif`` or ``.pgm``."""
    suffix = Path(path).suffix.lower()
    if suffix == ".ssif":
        return read_ssif(path, pixel_pitch)
    if suffix == ".pgm":
        return read_pgm16(path, pixel_pitch)
    raise InvalidArgumentError(f"{path}: unsupported image format {suffix!r}")


# ─────────────────────────────────────────────
# CSV tables
# ─────────────────────────────────────────────


def _write_rows(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[object]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _read_rows(path: PathLike, header: Sequence[str]) -> List[dict]:
    with Path(path).open(newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames != list(header):
            raise InvalidArgumentError(
                f"{path}: expected columns {list(header)}, got {reader.fieldnames}"
            )
        return list(reader)


SHIFT_COLUMNS = ("frame", "dx", "dy", "iterations", "converged")
TRUE_SHIFT_COLUMNS = ("frame", "dx", "dy")


def write_shifts_csv(path: PathLike, estimates: Sequence[ShiftEstimate]) -> Path:
    return _write_rows(
        path,
        SHIFT_COLUMNS,
        (
            (k, _fmt(e.p.p1), _fmt(e.p.p2), e.iterations, str(e.converged).lower())
            for k, e in enumerate(estimates)
        ),
    )


def read_shifts_csv(path: PathLike) -> List[Tuple[ShiftVector, int, bool]]:
    """``(p, iterations, converged)`` per frame; ``p`` is the registered content shift."""
    rows = _read_rows(path, SHIFT_COLUMNS)
    return [
        (ShiftVector(float(r["dx"]), float(r["dy"])), int(r["iterations"]), r["converged"] == "true")
        for r in rows
    ]


def write_true_shifts_csv(path: PathLike, shifts: Sequence[ShiftVector]) -> Path:
    return _write_rows(
        path, TRUE_SHIFT_COLUMNS, ((k, _fmt(s.dx), _fmt(s.dy)) for k, s in enumerate(shifts))
    )


def read_true_shifts_csv(path: PathLike) -> List[ShiftVector]:
    return [ShiftVector(float(r["dx"]), float(r["dy"])) for r in _read_rows(path, TRUE_SHIFT_COLUMNS)]


def write_measurements_csv(path: PathLike, m: MeasurementVector) -> Path:
    return _write_rows(path, ("index", "value"), ((k, _fmt(v)) for k, v in enumerate(m.values)))


def read_measurement_values(path: PathLike) -> np.ndarray:
    rows = _read_rows(path, ("index", "value"))
    return np.array([float(r["value"]) for r in rows], dtype=np.float64)


def write_weights_csv(path: PathLike, weights: SparseWeightMatrix) -> Path:
    """Raw (pre-normalization) coefficients, sorted by ``(row, col)``."""
    return _write_rows(
        path,
        ("row", "col", "weight"),
        zip(weights.rows.tolist(), weights.cols.tolist(), map(_fmt, weights.weights)),
    )


# ─────────────────────────────────────────────
# Digests
# ─────────────────────────────────────────────


def sha256_digest(path: PathLike) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for block in iter(lambda: handle.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()
