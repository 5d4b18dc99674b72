import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from pydantic import ValidationError

from models.config import PipelineConfig, SceneSource, load_config
from ssi import fileio, metrics, optics_forward, registration
from ssi.errors import StageError
from ssi.pipeline import (
    ArtifactLog,
    build_scene,
    detector_sweep,
    estimates_from_table,
    geometry_summary,
    illumination_only,
    output_lock,
    run_pipeline,
    stage,
    substreams,
    super_resolve,
    write_report,
)
from ssi.types import LowResStack

EXIT_FAILURE = 2


# ─────────────────────────────────────────────────────────────────────────────
# Configuration from the command line
# ─────────────────────────────────────────────────────────────────────────────
def config_from_args(args: argparse.Namespace) -> PipelineConfig:
    overrides: List[str] = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out_dir is not None:
        overrides.append(f"paths.out_dir={json.dumps(str(args.out_dir))}")
    return load_config(args.config, overrides)


def _emit(payload: Dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def _frames_dir(args: argparse.Namespace, config: PipelineConfig) -> Path:
    return Path(args.frames_dir) if args.frames_dir else Path(config.paths.out_dir) / "frames"


def _read_stack(frames_dir: Path, config: PipelineConfig) -> LowResStack:
    paths = sorted(frames_dir.glob("frame_*.ssif"))
    pitch = config.geometry.lr_pixel_pitch
    return LowResStack(
        frames=[fileio.read_ssif(path, pixel_pitch=pitch) for path in paths],
        template_index=config.template_index,
    )


# ─────────────────────────────────────────────────────────────────────────────
# Subcommands
# ─────────────────────────────────────────────────────────────────────────────
def cmd_target(args: argparse.Namespace, config: PipelineConfig) -> None:
    out_dir = Path(config.paths.out_dir)
    with output_lock(out_dir):
        artifacts = ArtifactLog(out_dir)
        with stage("scene"):
            scene, _ = build_scene(config)
            artifacts.image("target", scene)
    _emit({"artifacts": [r.model_dump() for r in artifacts.records]})


def cmd_simulate(args: argparse.Namespace, config: PipelineConfig) -> None:
    out_dir = Path(config.paths.out_dir)
    with output_lock(out_dir):
        artifacts = ArtifactLog(out_dir)
        with stage("scene"):
            scene, _ = build_scene(config)
        with stage("simulate"):
            stack = optics_forward.simulate_lowres_stack(
                scene, config.geometry, config.array, config.spi,
                rng=substreams(config.seed)["simulate"], template_index=config.template_index,
            )
            for k, frame in enumerate(stack.frames):
                artifacts.ssif(f"frames/frame_{k:03d}.ssif", frame)
            artifacts.table("true_shifts.csv", fileio.write_true_shifts_csv, stack.true_shifts)
    _emit({"frames": len(stack), "artifacts": len(artifacts.records)})


def cmd_spi_reconstruct(args: argparse.Namespace, config: PipelineConfig) -> None:
    out_dir = Path(config.paths.out_dir)
    basis_side = args.basis_side or config.spi.basis_side
    with output_lock(out_dir):
        artifacts = ArtifactLog(out_dir)
        with stage("scene"):
            if args.input:
                scene = fileio.read_image(args.input)
            else:
                scene, _ = build_scene(config)
        with stage("spi"):
            image, m = illumination_only(
                scene, basis_side, config.spi, rng=substreams(config.seed)["illumination"]
            )
            artifacts.table(f"measurements_{basis_side}.csv", fileio.write_measurements_csv, m)
            artifacts.image(f"spi_{basis_side}", image)
    _emit({"measurements": len(m), "artifacts": [r.model_dump() for r in artifacts.records]})


def cmd_register(args: argparse.Namespace, config: PipelineConfig) -> None:
    out_dir = Path(config.paths.out_dir)
    with output_lock(out_dir):
        with stage("register"):
            stack = _read_stack(_frames_dir(args, config), config)
            estimates = registration.estimate_stack_shifts(stack, config.registration, config.workers)
            path = fileio.write_shifts_csv(out_dir / "shifts.csv", estimates)
    _emit({
        "shifts": str(path),
        "converged": sum(e.converged for e in estimates),
        "frames": len(estimates),
    })


def cmd_superres(args: argparse.Namespace, config: PipelineConfig) -> None:
    out_dir = Path(config.paths.out_dir)
    shifts_path = Path(args.shifts) if args.shifts else out_dir / "shifts.csv"
    with output_lock(out_dir):
        artifacts = ArtifactLog(out_dir)
        with stage("superres"):
            stack = _read_stack(_frames_dir(args, config), config)
            estimates = estimates_from_table(fileio.read_shifts_csv(shifts_path))
            high_res, grid, weights = super_resolve(stack, estimates, config)
            if config.superres.export_weights:
                artifacts.table("weights.csv", fileio.write_weights_csv, weights)
            artifacts.image("highres", high_res.image)
    _emit({
        "grid": grid.model_dump(),
        "iterations": high_res.iterations,
        "relative_residual": high_res.relative_residual,
        "converged": high_res.converged,
    })


def cmd_pipeline(args: argparse.Namespace, config: PipelineConfig) -> None:
    report = run_pipeline(config)
    summary = {
        "report": str(Path(config.paths.out_dir) / "report.json"),
        "solver": report.solver.model_dump(mode="json"),
    }
    if report.quality is not None:
        summary["quality"] = report.quality.model_dump(mode="json")
    _emit(summary)


def cmd_metrics(args: argparse.Namespace, config: PipelineConfig) -> None:
    with stage("metrics"):
        image = fileio.read_image(args.image)
        payload: Dict = {"image": str(args.image)}
        if args.reference:
            reference = fileio.read_image(args.reference)
            payload["psnr"] = metrics.psnr(image, reference, args.peak)
        if config.scene.source is SceneSource.BAR_TARGET:
            _, spec = build_scene(config)
            offset = tuple(args.offset) if args.offset else (0.0, 0.0)
            payload["contrasts"] = [
                metrics.resolved_contrast(image, spec, index, offset)
                for index in range(len(spec.groups))
            ]
        if args.spectrum:
            fileio.write_pgm16(args.spectrum, metrics.log_spectrum(image))
            payload["spectrum"] = str(args.spectrum)
    if payload.get("psnr") == float("inf"):
        payload["psnr"] = "inf"
    _emit(payload)


def cmd_sweep(args: argparse.Namespace, config: PipelineConfig) -> None:
    out_dir = Path(config.paths.out_dir)
    with output_lock(out_dir):
        with stage("sweep"):
            report = detector_sweep(config, args.sizes, args.pitches)
            write_report(out_dir / "sweep.json", report)
    _emit(report.model_dump(mode="json"))


def cmd_geometry(args: argparse.Namespace, config: PipelineConfig) -> None:
    summary = geometry_summary(config).model_dump(mode="json")
    with stage("geometry"):
        summary["pitch_for_lattice_mm"] = optics_forward.pitch_for_shift(
            config.geometry, 1.0 / config.array.rows
        )
        summary["image_shift_per_pitch_um"] = optics_forward.image_shift_um(
            config.geometry, config.array.pitch
        )
    _emit(summary)


COMMANDS: Dict[str, Callable[[argparse.Namespace, PipelineConfig], None]] = {
    "target": cmd_target,
    "simulate": cmd_simulate,
    "spi-reconstruct": cmd_spi_reconstruct,
    "register": cmd_register,
    "superres": cmd_superres,
    "pipeline": cmd_pipeline,
    "metrics": cmd_metrics,
    "sweep": cmd_sweep,
    "geometry": cmd_geometry,
}


# ─────────────────────────────────────────────────────────────────────────────
# Argument parsing
# ─────────────────────────────────────────────────────────────────────────────
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML configuration file")
    common.add_argument("--seed", type=int, help="Overrides the config seed")
    common.add_argument("--out-dir", type=Path, help="Overrides paths.out_dir")
    common.add_argument(
        "--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"]
    )
    common.add_argument(
        "--set", action="append", metavar="SECTION.KEY=VALUE",
        help="Config override, value parsed as a TOML scalar (repeatable)",
    )

    parser = argparse.ArgumentParser(
        prog="ssi", description="Synthetic sampling imaging: simulate, register, super-resolve."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("target", parents=[common], help="Write the ground-truth bar target")
    sub.add_parser("simulate", parents=[common], help="Simulate the low-res frame stack")

    spi = sub.add_parser("spi-reconstruct", parents=[common], help="Single-detector SPI baseline")
    spi.add_argument("--input", type=Path, help="Scene file (.ssif/.pgm); default: configured scene")
    spi.add_argument("--basis-side", type=int, help="Pattern resolution N (power of two)")

    for name, text in (("register", "Estimate frame shifts"), ("superres", "Solve the high-res image")):
        command = sub.add_parser(name, parents=[common], help=text)
        command.add_argument("--frames-dir", type=Path, help="Default: <out-dir>/frames")
        if name == "superres":
            command.add_argument("--shifts", type=Path, help="Default: <out-dir>/shifts.csv")

    sub.add_parser("pipeline", parents=[common], help="Run every stage and write report.json")

    met = sub.add_parser("metrics", parents=[common], help="PSNR, bar contrasts, log spectrum")
    met.add_argument("--image", type=Path, required=True)
    met.add_argument("--reference", type=Path)
    met.add_argument("--peak", type=float, default=1.0)
    met.add_argument("--offset", type=float, nargs=2, metavar=("DX", "DY"),
                     help="Content translation relative to the target, target pixels")
    met.add_argument("--spectrum", type=Path, help="Write the log spectrum to this PGM")

    sweep = sub.add_parser("sweep", parents=[common], help="Detector-count study")
    sweep.add_argument("--sizes", type=int, nargs="+", default=[2, 4, 6, 8])
    sweep.add_argument("--pitches", type=float, nargs="+", help="mm, one per size")

    sub.add_parser("geometry", parents=[common], help="Depth of field, cutoffs, shifts")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = config_from_args(args)
        COMMANDS[args.command](args, config)
    except ValidationError as exc:
        print(f"invalid configuration:\n{exc}", file=sys.stderr)
        return EXIT_FAILURE
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_FAILURE
    except (ValueError, OSError) as exc:
        print(f"[config] {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return 0


if __name__ == "__main__":
    sys.exit(main())
