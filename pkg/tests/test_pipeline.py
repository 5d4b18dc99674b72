"""
Tests for the end-to-end pipeline, its artifacts and the command-line front end.

Default runs use small 32x32 frames; the full-size scenarios are marked
``acceptance`` and deselected unless requested with ``-m acceptance``.
"""
import json
from pathlib import Path

import numpy as np
import pytest

from main import main
from models.acquisition import SpiOptions
from models.config import PipelineConfig
from models.processing import GridSpec, SolveOptions
from ssi import fileio, metrics, optics_forward, pipeline, superres, targets
from ssi.errors import InvalidArgumentError, StageError
from ssi.types import Image

HALF_PIXEL_PITCH = 6.3


def _report_bytes(out_dir: Path) -> bytes:
    return (Path(out_dir) / pipeline.REPORT_NAME).read_bytes()


# ─────────────────────────────────────────────
# Degenerate and small runs
# ─────────────────────────────────────────────


def test_single_detector_without_magnification_returns_the_frame(make_config):
    config = make_config(
        array={"rows": 1, "cols": 1},
        superres={"sigma": 0.1, "lambda_reg": 0.0},
    )
    result = pipeline.execute(config)
    np.testing.assert_allclose(
        result.high_res.image.pixels, result.stack.frames[0].pixels, atol=1e-8
    )
    assert result.report.solver.l1 == 1


def test_bar_target_run_reports_every_group(make_config):
    config = make_config(
        array={"rows": 1, "cols": 1},
        scene={"source": "bar_target", "path": None},
        superres={"sigma": 0.1, "lambda_reg": 0.0},
    )
    report = pipeline.execute(config).report
    assert [c.group for c in report.contrasts] == [0, 1, 2, 3]
    assert report.contrasts[0].period_lr_px == 1.25
    assert report.quality is not None


def test_run_writes_report_and_artifacts(make_config):
    config = make_config()
    report = pipeline.run_pipeline(config)
    out_dir = Path(config.paths.out_dir)

    assert not (out_dir / pipeline.LOCK_NAME).exists()
    assert len(report.shifts) == 4
    assert report.shifts[0].iterations == 0
    saved = json.loads(_report_bytes(out_dir))
    assert saved["seed"] is None
    assert "paths" not in saved["config"]

    paths = {record.path for record in report.artifacts}
    assert {"scene.ssif", "shifts.csv", "true_shifts.csv", "highres.ssif", "highres.pgm"} <= paths
    assert "frames/frame_003.ssif" in paths
    for record in report.artifacts:
        assert fileio.sha256_digest(out_dir / record.path) == record.sha256


def test_shift_estimates_track_the_true_shifts(make_config):
    report = pipeline.execute(make_config()).report
    for row in report.shifts:
        assert row.converged
        assert row.dx == pytest.approx(row.true_dx, abs=0.05)
        assert row.dy == pytest.approx(row.true_dy, abs=0.05)


def test_super_resolution_beats_nearest_neighbour(make_config):
    report = pipeline.execute(make_config()).report
    assert report.quality.psnr_high_res > report.quality.psnr_nearest
    assert report.solver.converged


def test_super_resolution_fits_the_frames_better_than_the_upsampled_template(make_config):
    config = make_config()
    result = pipeline.execute(config)
    lowres, weights = superres.assemble_system(
        result.stack, superres.grid_offsets(result.estimates), result.grid,
        config.superres.solve_options(),
    )
    p = weights.to_csr()
    start = metrics.upsample_nearest(result.stack.template, result.grid.l1, result.grid.l2)
    solved = np.linalg.norm(p @ result.high_res.image.pixels.ravel() - lowres)
    assert solved <= np.linalg.norm(p @ start.pixels.ravel() - lowres)


def test_runs_are_byte_identical(make_config, tmp_path):
    first = make_config(seed=99, paths={"out_dir": str(tmp_path / "a")})
    second = make_config(seed=99, paths={"out_dir": str(tmp_path / "b")})
    pipeline.run_pipeline(first)
    pipeline.run_pipeline(second)
    assert _report_bytes(tmp_path / "a") == _report_bytes(tmp_path / "b")
    assert (tmp_path / "a" / "highres.ssif").read_bytes() == (tmp_path / "b" / "highres.ssif").read_bytes()


def test_worker_count_does_not_change_results(make_config, tmp_path):
    serial = pipeline.run_pipeline(make_config(paths={"out_dir": str(tmp_path / "a")}))
    threaded = pipeline.run_pipeline(make_config(paths={"out_dir": str(tmp_path / "b")}, workers=3))
    assert serial.shifts == threaded.shifts
    assert serial.artifacts == threaded.artifacts


def test_noisy_runs_depend_only_on_the_seed(make_config, tmp_path):
    noise = {"noise": {"kind": "gaussian", "snr_db": 30.0}}
    reports = [
        pipeline.execute(make_config(seed=seed, spi=noise)).report.model_dump_json()
        for seed in (5, 5, 6)
    ]
    assert reports[0] == reports[1]
    assert reports[0] != reports[2]


def test_existing_lock_aborts(make_config):
    config = make_config()
    out_dir = Path(config.paths.out_dir)
    out_dir.mkdir(parents=True)
    (out_dir / pipeline.LOCK_NAME).touch()
    with pytest.raises(StageError) as excinfo:
        pipeline.run_pipeline(config)
    assert excinfo.value.stage == "lock"
    assert not (out_dir / pipeline.REPORT_NAME).exists()


def test_failing_stage_keeps_earlier_artifacts(make_config):
    config = make_config(superres={"l1": 4, "l2": 4})
    with pytest.raises(StageError) as excinfo:
        pipeline.run_pipeline(config)
    out_dir = Path(config.paths.out_dir)
    assert excinfo.value.stage == "superres"
    assert str(excinfo.value).startswith("[superres]")
    assert (out_dir / "shifts.csv").exists()
    assert (out_dir / "frames" / "frame_000.ssif").exists()
    assert not (out_dir / pipeline.REPORT_NAME).exists()
    assert not (out_dir / pipeline.LOCK_NAME).exists()


def test_missing_scene_file_fails_in_scene_stage(make_config, tmp_path):
    config = make_config(scene={"path": str(tmp_path / "missing.ssif")})
    with pytest.raises(StageError) as excinfo:
        pipeline.execute(config)
    assert excinfo.value.stage == "scene"


def test_weights_are_exported_on_request(make_config):
    config = make_config(superres={"export_weights": True})
    report = pipeline.run_pipeline(config)
    assert "weights.csv" in {record.path for record in report.artifacts}


# ─────────────────────────────────────────────
# Supplementary analyses
# ─────────────────────────────────────────────


def test_illumination_only_recovers_the_binned_scene(smooth_scene):
    scene = smooth_scene(64)
    image, m = pipeline.illumination_only(scene, 16, SpiOptions())
    expected = optics_forward.downsample_box(scene, 4)
    np.testing.assert_allclose(image.pixels, expected.pixels, atol=1e-9)
    assert len(m) == 2 * 16 * 16


def test_illumination_only_rejects_uneven_scenes(smooth_scene):
    with pytest.raises(InvalidArgumentError):
        pipeline.illumination_only(smooth_scene(60), 16, SpiOptions())


def test_sweep_reports_every_array(make_config):
    report = pipeline.detector_sweep(make_config(), sizes=(1, 2), pitches=(HALF_PIXEL_PITCH,) * 2)
    assert [(row.rows, row.magnification) for row in report.rows] == [(1, 1), (2, 2)]
    assert all(row.psnr_high_res is not None for row in report.rows)


def test_sweep_needs_a_pitch_per_size(make_config):
    with pytest.raises(InvalidArgumentError):
        pipeline.detector_sweep(make_config(), sizes=(3,))
    with pytest.raises(InvalidArgumentError):
        pipeline.detector_sweep(make_config(), sizes=(1, 2), pitches=(1.0,))


def test_exact_shifts_resolve_bars_beyond_single_frame_nyquist():
    """36 frames on a 1/6-pixel lattice resolve 1.25-pixel bars no single frame shows."""
    oversample, side = 6, 32
    spec = targets.standard_target(side, oversample)
    scene = targets.generate_bar_target(spec)
    config = PipelineConfig()
    stack = optics_forward.simulate_lowres_stack(
        scene, config.geometry, config.array, SpiOptions(basis_side=side, through_spi=False)
    )
    grid = GridSpec(n1=side, n2=side, l1=6, l2=6)
    template = stack.true_shifts[0]
    offsets = [template - s for s in stack.true_shifts]
    opts = SolveOptions(sigma=0.3, lambda_reg=0.05)
    lowres, weights = superres.assemble_system(stack, offsets, grid, opts)
    high_res = superres.solve_high_res(lowres, weights, grid, opts)

    shift = template.scaled(oversample)
    for finest in (0, 1):
        frames = [
            metrics.resolved_contrast(frame, spec, finest, (s.dx * oversample, s.dy * oversample))
            for frame, s in zip(stack.frames, stack.true_shifts)
        ]
        assert max(frames) < 0.1
        hr = metrics.resolved_contrast(high_res.image, spec, finest, (shift.dx, shift.dy))
        assert hr >= metrics.RESOLVED_CONTRAST


def test_estimated_shifts_resolve_bars_beyond_single_frame_nyquist(tmp_path):
    """Same 36-frame bar run as above, registered from the frames themselves."""
    config = PipelineConfig.model_validate({
        "template_index": 14,
        "spi": {"basis_side": 32},
        "scene": {"source": "bar_target", "oversample": 6},
        "superres": {"sigma": 0.3, "lambda_reg": 0.05},
        "paths": {"out_dir": str(tmp_path / "bars")},
    })
    report = pipeline.execute(config).report
    for row in report.shifts:
        assert row.converged
        assert row.dx == pytest.approx(row.true_dx, abs=0.1)
        assert row.dy == pytest.approx(row.true_dy, abs=0.1)
    for finest in report.contrasts[:2]:
        assert finest.best_frame < 0.1
        assert finest.high_res >= metrics.RESOLVED_CONTRAST
    assert report.quality.psnr_gain_over_nearest > 0


# ─────────────────────────────────────────────
# Command line
# ─────────────────────────────────────────────


def test_cli_geometry(capsys):
    assert main(["geometry"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["depth_of_field_um"] == pytest.approx(44.688, abs=1e-3)
    assert summary["pitch_for_lattice_mm"] == pytest.approx(2.1)


def test_cli_stage_by_stage(make_config, tmp_path, capsys):
    config = make_config()
    config_path = tmp_path / "ssi.toml"
    config_path.write_text(
        f"""
[spi]
basis_side = 32

[array]
rows = 2
cols = 2
pitch = {HALF_PIXEL_PITCH}

[scene]
source = "file"
path = "{Path(config.scene.path).as_posix()}"
oversample = 2

[superres]
sigma = 0.3
lambda_reg = 0.05
"""
    )
    common = ["--config", str(config_path), "--out-dir", str(tmp_path / "cli"), "--log-level", "WARNING"]
    for command in ("simulate", "register", "superres"):
        assert main([command, *common]) == 0
    out = tmp_path / "cli"
    assert len(list((out / "frames").glob("frame_*.ssif"))) == 4
    assert fileio.read_image(out / "highres.ssif").shape == (64, 64)

    assert main(["metrics", *common, "--image", str(out / "highres.ssif"),
                 "--reference", str(out / "highres.ssif")]) == 0
    assert '"psnr": "inf"' in capsys.readouterr().out


def test_cli_spi_reconstruct(tmp_path, rng):
    source = fileio.write_ssif(tmp_path / "input.ssif", Image(rng.random((32, 32))))
    out = tmp_path / "cli"
    args = ["spi-reconstruct", "--out-dir", str(out), "--log-level", "WARNING",
            "--basis-side", "8", "--input", str(source)]
    assert main(args) == 0
    assert fileio.read_image(out / "spi_8.pgm").shape == (8, 8)
    assert len(fileio.read_measurement_values(out / "measurements_8.csv")) == 128


def test_cli_target(tmp_path):
    out = tmp_path / "cli"
    args = ["target", "--out-dir", str(out), "--log-level", "WARNING",
            "--set", "spi.basis_side=32", "--set", "scene.oversample=2"]
    assert main(args) == 0
    assert fileio.read_image(out / "target.ssif").shape == (64, 64)


def test_cli_reports_invalid_configuration(capsys):
    assert main(["geometry", "--set", "spi.basis_side=48"]) == 2
    assert "invalid configuration" in capsys.readouterr().err


def test_cli_reports_stage_errors(tmp_path, capsys):
    out_dir = tmp_path / "locked"
    out_dir.mkdir()
    (out_dir / pipeline.LOCK_NAME).touch()
    assert main(["pipeline", "--out-dir", str(out_dir)]) == 2
    assert "[lock]" in capsys.readouterr().err


# ─────────────────────────────────────────────
# Full-size scenarios
# ─────────────────────────────────────────────


def _acceptance_config(tmp_path: Path, **updates) -> PipelineConfig:
    raw = {
        "template_index": 14,
        "superres": {"sigma": 0.3, "lambda_reg": 0.05},
        "paths": {"out_dir": str(tmp_path / "acceptance")},
    }
    raw.update(updates)
    return PipelineConfig.model_validate(raw)


@pytest.mark.acceptance
def test_sampling_resolution_doubles(tmp_path):
    report = pipeline.execute(_acceptance_config(tmp_path)).report
    for row in report.shifts:
        assert row.converged
        assert max(abs(row.dx - row.true_dx), abs(row.dy - row.true_dy)) <= 0.05
    for finest in report.contrasts[:2]:
        assert finest.best_frame < 0.1
        assert finest.high_res >= metrics.RESOLVED_CONTRAST
    assert report.quality.psnr_gain_over_nearest >= 3.0


@pytest.mark.acceptance
def test_detector_count_plateau(tmp_path):
    report = pipeline.detector_sweep(_acceptance_config(tmp_path))
    contrast = {row.rows: row.finest_contrast for row in report.rows}
    assert contrast[8] - contrast[6] < 0.5 * (contrast[4] - contrast[2])


@pytest.mark.acceptance
def test_full_size_runs_are_byte_identical(tmp_path):
    first = _acceptance_config(tmp_path, paths={"out_dir": str(tmp_path / "a")}, seed=7)
    second = _acceptance_config(tmp_path, paths={"out_dir": str(tmp_path / "b")}, seed=7)
    first_report = pipeline.run_pipeline(first)
    pipeline.run_pipeline(second)
    assert _report_bytes(tmp_path / "a") == _report_bytes(tmp_path / "b")
    for record in first_report.artifacts:
        assert (tmp_path / "a" / record.path).read_bytes() == (tmp_path / "b" / record.path).read_bytes()
