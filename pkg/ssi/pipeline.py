"""End-to-end orchestration: scene, frames, shifts, high-res image, report.

Stages run in order and write their artifacts as soon as they exist, so a
failing stage leaves everything before it on disk. Any error inside a stage
is re-raised as ``StageError`` tagged with the stage name.
"""
from __future__ import annotations

import json
import logging
import math
import os
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from models.acquisition import NoiseModel, SpiOptions
from models.config import PipelineConfig, SceneSource
from models.processing import GridSpec
from models.report import (
    ArtifactRecord,
    GeometrySummary,
    GroupContrast,
    QualitySummary,
    RunReport,
    ShiftRow,
    SolverDiagnostics,
    SweepReport,
    SweepRow,
)
from models.target import BarTargetSpec
from ssi import fileio, metrics, optics_forward, registration, spi_core, superres, targets
from ssi.errors import InvalidArgumentError, SSIError, StageError
from ssi.types import (
    HighResImage,
    Image,
    LowResStack,
    MeasurementVector,
    ShiftEstimate,
    ShiftVector,
    SparseWeightMatrix,
    WarpParams,
)

logger = logging.getLogger(__name__)

LOCK_NAME = ".ssi.lock"
REPORT_NAME = "report.json"
RANDOM_STAGES = ("simulate", "illumination")

# Detector pitch (mm) per square array side used in the detector-count study.
REFERENCE_PITCHES_MM: Dict[int, float] = {2: 5.9, 4: 3.1, 6: 2.1, 8: 1.5}
MAX_SWEEP_MAGNIFICATION = 6


# ─────────────────────────────────────────────────────────────────────────────
# Run plumbing
# ─────────────────────────────────────────────────────────────────────────────


@contextmanager
def output_lock(out_dir: Path) -> Iterator[Path]:
    """Hold ``<out_dir>/.ssi.lock`` for the duration of a run."""
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / LOCK_NAME
    try:
        with lock.open("x") as handle:
            handle.write(f"{os.getpid()}\n")
    except FileExistsError as exc:
        raise StageError("lock", f"{lock} exists; another run is using {out_dir}") from exc
    try:
        yield lock
    finally:
        lock.unlink(missing_ok=True)


@contextmanager
def stage(name: str) -> Iterator[None]:
    logger.info("stage %s", name)
    try:
        yield
    except StageError:
        raise
    except (SSIError, ValueError, ArithmeticError, OSError) as exc:
        detail = exc.detail if isinstance(exc, SSIError) else str(exc)
        raise StageError(name, detail) from exc


class ArtifactLog:
    """Writes files under ``out_dir`` and remembers their digests in write order."""

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        self.records: List[ArtifactRecord] = []

    def _record(self, path: Path) -> Path:
        self.records.append(
            ArtifactRecord(
                path=path.relative_to(self.out_dir).as_posix(),
                sha256=fileio.sha256_digest(path),
            )
        )
        return path

    def ssif(self, name: str, img: Image) -> Path:
        return self._record(fileio.write_ssif(self.out_dir / name, img))

    def pgm(self, name: str, img: Image) -> Path:
        pgm, sidecar = fileio.write_pgm16(self.out_dir / name, img)
        self._record(pgm)
        self._record(sidecar)
        return pgm

    def image(self, stem: str, img: Image) -> None:
        self.ssif(f"{stem}.ssif", img)
        self.pgm(f"{stem}.pgm", img)

    def table(self, name: str, writer: Callable[..., Path], *args) -> Path:
        return self._record(writer(self.out_dir / name, *args))


def substreams(seed: Optional[int]) -> Dict[str, Optional[np.random.Generator]]:
    """One independent generator per randomized stage, all derived from ``seed``."""
    if seed is None:
        return {name: None for name in RANDOM_STAGES}
    children = np.random.default_rng(seed).spawn(len(RANDOM_STAGES))
    return dict(zip(RANDOM_STAGES, children))


def write_report(path: Path, report: RunReport | SweepReport) -> Path:
    text = json.dumps(report.model_dump(mode="json"), indent=2, sort_keys=True)
    path.write_text(text + "\n")
    return path


# ─────────────────────────────────────────────────────────────────────────────
# Stages
# ─────────────────────────────────────────────────────────────────────────────


def build_scene(config: PipelineConfig) -> Tuple[Image, Optional[BarTargetSpec]]:
    """Ground-truth scene on the ``basis_side * oversample`` grid and its bar layout."""
    oversample = config.scene.oversample
    side = config.spi.basis_side * oversample
    pitch = config.geometry.lr_pixel_pitch / oversample
    if config.scene.source is SceneSource.BAR_TARGET:
        spec = config.scene.target or targets.standard_target(config.spi.basis_side, oversample)
        if spec.side != side:
            raise InvalidArgumentError(f"target side {spec.side} does not match the {side}px scene")
        return Image(targets.generate_bar_target(spec).pixels, pixel_pitch=pitch), spec
    scene = fileio.read_image(config.scene.path, pixel_pitch=pitch)
    if scene.shape != (side, side):
        raise InvalidArgumentError(f"scene file is {scene.shape}, expected {(side, side)}")
    return scene, None


def illumination_only(
    scene: Image,
    basis_side: int,
    spi: SpiOptions,
    noise: Optional[NoiseModel] = None,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[Image, MeasurementVector]:
    """Whole camera binned into one detector: plain SPI at ``basis_side`` resolution."""
    if scene.height != scene.width or scene.width % basis_side:
        raise InvalidArgumentError(
            f"scene {scene.height}x{scene.width} is not a square multiple of {basis_side}"
        )
    frame = optics_forward.downsample_box(scene, scene.width // basis_side)
    patterns = spi_core.generate_patterns(basis_side, spi.scheme)
    m = spi_core.simulate_measurements(frame, patterns, noise or spi.noise, rng)
    return spi_core.reconstruct_image(m, pixel_pitch=frame.pixel_pitch), m


def estimates_from_table(rows: Sequence[Tuple[ShiftVector, int, bool]]) -> List[ShiftEstimate]:
    """Rebuild estimates from a shift table; unconverged rows with no iterations
    are frames whose registration failed."""
    estimates = []
    for p, iterations, converged in rows:
        failed = not converged and iterations == 0
        estimates.append(
            ShiftEstimate(
                p=WarpParams(p.dx, p.dy),
                iterations=iterations,
                final_update_norm=math.inf if failed else 0.0,
                converged=converged,
                final_objective=math.inf if failed else 0.0,
            )
        )
    return estimates


def super_resolve(
    stack: LowResStack, estimates: Sequence[ShiftEstimate], config: PipelineConfig
) -> Tuple[HighResImage, GridSpec, SparseWeightMatrix]:
    """Solve for the high-res image from every frame whose registration produced a shift."""
    usable = [k for k, e in enumerate(estimates) if math.isfinite(e.final_objective)]
    if len(usable) < len(estimates):
        logger.warning("leaving out %d frames whose registration failed", len(estimates) - len(usable))
    if not usable:
        raise InvalidArgumentError("no registered frame to reconstruct from")
    frames = LowResStack(frames=[stack.frames[k] for k in usable])
    shifts = superres.grid_offsets([estimates[k] for k in usable])
    template = stack.template
    grid = config.superres.grid(config.array, template.width, template.height)
    opts = config.superres.solve_options()
    lowres, weights = superres.assemble_system(frames, shifts, grid, opts)
    initial = metrics.upsample_nearest(template, grid.l1, grid.l2).pixels
    high_res = superres.solve_high_res(
        lowres, weights, grid, opts,
        initial=initial,
        pixel_pitch=template.pixel_pitch / max(grid.l1, grid.l2),
    )
    return high_res, grid, weights


def aligned_truth(
    scene: Image, template_shift: ShiftVector, oversample: int, grid: GridSpec
) -> Optional[Image]:
    """Ground truth in the template frame's coordinates on the high-res grid.

    ``None`` when the high-res grid does not evenly divide the scene grid.
    """
    if grid.l1 != grid.l2 or oversample % grid.l1:
        return None
    moved = optics_forward.warp_subpixel(scene, template_shift.scaled(oversample))
    return optics_forward.downsample_box(moved, oversample // grid.l1)


def geometry_summary(config: PipelineConfig) -> GeometrySummary:
    geom = config.geometry
    cutoffs = optics_forward.cutoff_frequencies(geom)
    return GeometrySummary(
        depth_of_field_um=optics_forward.depth_of_field(geom),
        within_depth_of_field=optics_forward.within_depth_of_field(geom),
        illumination_cutoff_per_um=cutoffs.illumination,
        modulator_cutoff_per_um=cutoffs.modulator,
        undersampled=cutoffs.undersampled,
        shift_per_pitch_px=optics_forward.shift_from_geometry(geom, config.array.pitch),
        lr_pixels_per_target_pixel=1.0 / config.scene.oversample,
    )


def group_contrasts(
    spec: BarTargetSpec, stack: LowResStack, high_res: Image, oversample: int
) -> List[GroupContrast]:
    """Contrast of every group in the high-res image, the template and the best single frame."""
    offsets = [(s.dx * oversample, s.dy * oversample) for s in stack.true_shifts]
    template_offset = offsets[stack.template_index]
    rows = []
    for index, group in enumerate(spec.groups):
        high = metrics.resolved_contrast(high_res, spec, index, template_offset)
        best_frame = max(
            metrics.resolved_contrast(frame, spec, index, offset)
            for frame, offset in zip(stack.frames, offsets)
        )
        rows.append(
            GroupContrast(
                group=index,
                period_px=group.period,
                period_lr_px=group.period / oversample,
                orientation=group.orientation.value,
                high_res=high,
                template=metrics.resolved_contrast(stack.template, spec, index, template_offset),
                best_frame=best_frame,
                resolved=high >= metrics.RESOLVED_CONTRAST,
            )
        )
    return rows


def shift_rows(stack: LowResStack, estimates: Sequence[ShiftEstimate]) -> List[ShiftRow]:
    reference = stack.true_shifts[stack.template_index] if stack.true_shifts else None
    rows = []
    for k, estimate in enumerate(estimates):
        truth = stack.true_shifts[k] - reference if reference is not None else None
        rows.append(
            ShiftRow(
                frame=k,
                dx=estimate.p.p1,
                dy=estimate.p.p2,
                iterations=estimate.iterations,
                converged=estimate.converged,
                true_dx=truth.dx if truth is not None else None,
                true_dy=truth.dy if truth is not None else None,
            )
        )
    return rows


@dataclass
class PipelineResult:
    report: RunReport
    scene: Image
    stack: LowResStack
    estimates: List[ShiftEstimate]
    high_res: HighResImage
    grid: GridSpec


def execute(config: PipelineConfig, artifacts: Optional[ArtifactLog] = None) -> PipelineResult:
    """Run every stage; with ``artifacts`` each stage's output is also written."""
    rngs = substreams(config.seed)
    oversample = config.scene.oversample

    with stage("scene"):
        scene, spec = build_scene(config)
        if artifacts:
            artifacts.image("scene", scene)

    with stage("simulate"):
        stack = optics_forward.simulate_lowres_stack(
            scene, config.geometry, config.array, config.spi,
            rng=rngs["simulate"], template_index=config.template_index,
        )
        if artifacts:
            for k, frame in enumerate(stack.frames):
                artifacts.ssif(f"frames/frame_{k:03d}.ssif", frame)
            artifacts.table("true_shifts.csv", fileio.write_true_shifts_csv, stack.true_shifts)
            artifacts.pgm("template.pgm", stack.template)

    with stage("register"):
        estimates = registration.estimate_stack_shifts(stack, config.registration, config.workers)
        if artifacts:
            artifacts.table("shifts.csv", fileio.write_shifts_csv, estimates)

    with stage("superres"):
        high_res, grid, weights = super_resolve(stack, estimates, config)
        if artifacts:
            if config.superres.export_weights:
                artifacts.table("weights.csv", fileio.write_weights_csv, weights)
            artifacts.image("highres", high_res.image)

    with stage("metrics"):
        template = stack.template
        cubic = metrics.upsample_interpolated(template, grid.l1, grid.l2)
        quality = None
        truth = aligned_truth(scene, stack.true_shifts[stack.template_index], oversample, grid)
        if truth is not None:
            nearest = metrics.upsample_nearest(template, grid.l1, grid.l2)
            peak = float(scene.pixels.max()) if scene.pixels.max() > 0 else 1.0
            hr_psnr = metrics.psnr(high_res.image, truth, peak)
            nn_psnr = metrics.psnr(nearest, truth, peak)
            quality = QualitySummary(
                psnr_high_res=hr_psnr,
                psnr_nearest=nn_psnr,
                psnr_cubic=metrics.psnr(cubic, truth, peak),
                psnr_gain_over_nearest=hr_psnr - nn_psnr,
            )
        else:
            logger.info("high-res grid does not divide the scene grid; PSNR skipped")
        contrasts = group_contrasts(spec, stack, high_res.image, oversample) if spec else []
        if artifacts:
            artifacts.pgm("spectrum_highres.pgm", metrics.log_spectrum(high_res.image))
            artifacts.pgm("spectrum_template.pgm", metrics.log_spectrum(template))
            artifacts.pgm("spectrum_cubic.pgm", metrics.log_spectrum(cubic))

    report = RunReport(
        seed=config.seed,
        config=config.echo(),
        geometry=geometry_summary(config),
        shifts=shift_rows(stack, estimates),
        solver=SolverDiagnostics(
            iterations=high_res.iterations,
            relative_residual=high_res.relative_residual,
            converged=high_res.converged,
            lambda_reg=high_res.lambda_reg,
            nnz=weights.nnz,
            l1=grid.l1,
            l2=grid.l2,
        ),
        quality=quality,
        contrasts=contrasts,
        artifacts=list(artifacts.records) if artifacts else [],
    )
    return PipelineResult(
        report=report, scene=scene, stack=stack, estimates=estimates, high_res=high_res, grid=grid
    )


def run_pipeline(config: PipelineConfig) -> RunReport:
    """Full run into ``config.paths.out_dir``, ending with ``report.json``."""
    out_dir = Path(config.paths.out_dir)
    with output_lock(out_dir):
        artifacts = ArtifactLog(out_dir)
        result = execute(config, artifacts)
        with stage("report"):
            write_report(out_dir / REPORT_NAME, result.report)
    logger.info("report written to %s", out_dir / REPORT_NAME)
    return result.report


# ─────────────────────────────────────────────────────────────────────────────
# Detector-count study
# ─────────────────────────────────────────────────────────────────────────────


def sweep_config(config: PipelineConfig, side: int, pitch: float) -> PipelineConfig:
    """``config`` with a ``side x side`` array and magnification ``min(6, side)``."""
    magnification = min(MAX_SWEEP_MAGNIFICATION, side)
    raw = config.model_dump()
    raw["array"].update(rows=side, cols=side, pitch=pitch)
    raw["superres"].update(l1=magnification, l2=magnification)
    raw["template_index"] = min(config.template_index, side * side - 1)
    return PipelineConfig.model_validate(raw)


def detector_sweep(
    config: PipelineConfig,
    sizes: Sequence[int] = (2, 4, 6, 8),
    pitches: Optional[Sequence[float]] = None,
) -> SweepReport:
    """Repeat the pipeline for several square arrays and collect the finest-group contrast."""
    if pitches is None:
        missing = [n for n in sizes if n not in REFERENCE_PITCHES_MM]
        if missing:
            raise InvalidArgumentError(f"no reference pitch for array sides {missing}")
        pitches = [REFERENCE_PITCHES_MM[n] for n in sizes]
    if len(pitches) != len(sizes):
        raise InvalidArgumentError(f"{len(pitches)} pitches for {len(sizes)} array sizes")

    rows = []
    for side, pitch in zip(sizes, pitches):
        variant = sweep_config(config, side, pitch)
        result = execute(variant)
        contrasts = result.report.contrasts
        finest = min(contrasts, key=lambda c: c.period_px).high_res if contrasts else math.nan
        quality = result.report.quality
        rows.append(
            SweepRow(
                rows=side,
                cols=side,
                pitch_mm=pitch,
                magnification=variant.superres.l1,
                finest_contrast=finest,
                psnr_high_res=quality.psnr_high_res if quality else None,
            )
        )
        logger.info("%dx%d array: finest-group contrast %.3f", side, side, finest)
    return SweepReport(seed=config.seed, rows=rows)
