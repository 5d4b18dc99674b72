"""
Tests for the on-disk formats: SSIF, 16-bit PGM with range sidecar, CSV tables.
"""
import hashlib
import json
import struct

import numpy as np
import pytest

from models.acquisition import PatternScheme
from models.processing import GridSpec
from models.report import ImageRange
from ssi import fileio, superres
from ssi.errors import InvalidArgumentError
from ssi.types import Image, MeasurementVector, ShiftEstimate, ShiftVector, WarpParams


@pytest.fixture
def float32_image(rng) -> Image:
    return Image(rng.normal(size=(5, 7)).astype(np.float32))


# ─────────────────────────────────────────────
# SSIF
# ─────────────────────────────────────────────


def test_ssif_layout(tmp_path, float32_image):
    path = fileio.write_ssif(tmp_path / "a.ssif", float32_image)
    data = path.read_bytes()
    assert data[:4] == b"SSIF"
    assert struct.unpack("<III", data[4:16]) == (7, 5, 0)
    assert len(data) == 16 + 4 * 35
    first = struct.unpack("<f", data[16:20])[0]
    assert first == float32_image.pixels[0, 0]


def test_ssif_round_trip_is_exact(tmp_path, float32_image):
    path = fileio.write_ssif(tmp_path / "a.ssif", float32_image)
    back = fileio.read_ssif(path, pixel_pitch=3.0)
    np.testing.assert_array_equal(back.pixels, float32_image.pixels)
    assert back.pixel_pitch == 3.0


def test_ssif_rejects_foreign_or_truncated_files(tmp_path, float32_image):
    path = fileio.write_ssif(tmp_path / "a.ssif", float32_image)
    truncated = tmp_path / "short.ssif"
    truncated.write_bytes(path.read_bytes()[:-4])
    foreign = tmp_path / "foreign.ssif"
    foreign.write_bytes(b"XXXX" + path.read_bytes()[4:])
    for bad in (truncated, foreign):
        with pytest.raises(InvalidArgumentError):
            fileio.read_ssif(bad)


# ─────────────────────────────────────────────
# PGM
# ─────────────────────────────────────────────


def test_pgm_header_and_byte_order(tmp_path):
    img = Image(np.array([[0.0, 1.0], [0.5, 1.0]]))
    path, sidecar = fileio.write_pgm16(tmp_path / "a.pgm", img)
    data = path.read_bytes()
    header = b"P5\n2 2\n65535\n"
    assert data.startswith(header)
    assert data[len(header):len(header) + 4] == b"\x00\x00\xff\xff"
    assert json.loads(sidecar.read_text()) == {"lo": 0.0, "hi": 1.0}
    assert sidecar.name == "a.pgm.range.json"


def test_pgm_round_trip_within_one_step(tmp_path, rng):
    img = Image(rng.random((9, 11)) * 3.0 - 1.0)
    path, _ = fileio.write_pgm16(tmp_path / "a.pgm", img)
    back = fileio.read_pgm16(path)
    step = (img.pixels.max() - img.pixels.min()) / 65535
    np.testing.assert_allclose(back.pixels, img.pixels, atol=step / 2 + 1e-12)


def test_pgm_is_lossless_at_sixteen_bits(tmp_path, rng):
    first, _ = fileio.write_pgm16(tmp_path / "a.pgm", Image(rng.random((6, 6))))
    back = fileio.read_pgm16(first)
    window = ImageRange.model_validate_json(fileio.range_sidecar(first).read_text())
    second, _ = fileio.write_pgm16(tmp_path / "b.pgm", back, window)
    assert first.read_bytes() == second.read_bytes()


def test_pgm_with_explicit_window_clips(tmp_path):
    img = Image(np.array([[-1.0, 0.5, 2.0]]))
    path, _ = fileio.write_pgm16(tmp_path / "a.pgm", img, ImageRange(lo=0.0, hi=1.0))
    np.testing.assert_allclose(fileio.read_pgm16(path).pixels, [[0.0, 0.5, 1.0]], atol=1e-5)


def test_constant_image_round_trips(tmp_path):
    path, _ = fileio.write_pgm16(tmp_path / "a.pgm", Image(np.full((3, 3), 0.7)))
    np.testing.assert_allclose(fileio.read_pgm16(path).pixels, 0.7)


def test_read_image_dispatches_on_suffix(tmp_path, float32_image):
    fileio.write_ssif(tmp_path / "a.ssif", float32_image)
    fileio.write_pgm16(tmp_path / "a.pgm", float32_image)
    assert fileio.read_image(tmp_path / "a.ssif").shape == (5, 7)
    assert fileio.read_image(tmp_path / "a.pgm").shape == (5, 7)
    with pytest.raises(InvalidArgumentError):
        fileio.read_image(tmp_path / "a.png")


# ─────────────────────────────────────────────
# CSV tables
# ─────────────────────────────────────────────


def test_shift_table(tmp_path):
    estimates = [
        ShiftEstimate(WarpParams(0.0, 0.0), 0, 0.0, True, 0.0),
        ShiftEstimate(WarpParams(1 / 3, -0.1), 7, 5e-5, False, 0.2),
    ]
    path = fileio.write_shifts_csv(tmp_path / "shifts.csv", estimates)
    lines = path.read_text().splitlines()
    assert lines[0] == "frame,dx,dy,iterations,converged"
    assert lines[2].startswith("1,0.33333333333333331,")
    rows = fileio.read_shifts_csv(path)
    assert rows[1][0].dx == 1 / 3 and rows[1][0].dy == -0.1
    assert rows[1][1:] == (7, False)
    assert rows[0][2] is True


def test_true_shift_table(tmp_path):
    shifts = [ShiftVector(-5 / 12, 1 / 6), ShiftVector(0.0, 0.0)]
    path = fileio.write_true_shifts_csv(tmp_path / "true.csv", shifts)
    assert path.read_text().splitlines()[0] == "frame,dx,dy"
    assert fileio.read_true_shifts_csv(path) == shifts


def test_measurement_table(tmp_path, rng):
    values = rng.normal(size=8)
    m = MeasurementVector(values, PatternScheme.RAW_BIPOLAR, 2)
    path = fileio.write_measurements_csv(tmp_path / "m.csv", m)
    np.testing.assert_array_equal(fileio.read_measurement_values(path), values)


def test_weight_table(tmp_path):
    grid_shifts = [ShiftVector(0.0, 0.0), ShiftVector(0.5, 0.5)]
    weights = superres.build_weight_matrix(grid_shifts, GridSpec(n1=2, n2=2, l1=2, l2=2))
    path = fileio.write_weights_csv(tmp_path / "w.csv", weights)
    lines = path.read_text().splitlines()
    assert lines[0] == "row,col,weight"
    assert len(lines) == weights.nnz + 1
    row, col, weight = lines[1].split(",")
    assert (int(row), int(col), float(weight)) == (
        int(weights.rows[0]), int(weights.cols[0]), float(weights.weights[0])
    )


def test_table_with_wrong_header_is_rejected(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("frame,x,y\n0,1,2\n")
    with pytest.raises(InvalidArgumentError):
        fileio.read_true_shifts_csv(path)


def test_digest_matches_hashlib(tmp_path):
    path = tmp_path / "blob.bin"
    path.write_bytes(b"ssi" * 50_000)
    assert fileio.sha256_digest(path) == hashlib.sha256(b"ssi" * 50_000).hexdigest()
