import tomllib
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field, model_validator

from models.acquisition import NoiseKind, SpiOptions
from models.geometry import DetectorArray, OpticalGeometry
from models.processing import GridSpec, RegistrationOptions, SolveOptions
from models.target import BarTargetSpec


class SceneSource(str, Enum):
    BAR_TARGET = "bar_target"
    FILE = "file"


class SceneConfig(BaseModel):
    """Where the high-res ground truth comes from.

    The simulation grid is ``spi.basis_side * oversample`` pixels on a side.
    """

    source: SceneSource = SceneSource.BAR_TARGET
    path: Optional[Path] = Field(None, description="SSIF or PGM scene when source = file")
    oversample: int = Field(6, ge=1)
    target: Optional[BarTargetSpec] = Field(
        None, description="Explicit bar layout; default is the standard target"
    )

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def check_source(self) -> "SceneConfig":
        if self.source is SceneSource.FILE and self.path is None:
            raise ValueError("scene.path is required when scene.source = 'file'")
        return self


class SuperResConfig(SolveOptions):
    """Solver options plus optional magnification overrides."""

    l1: Optional[int] = Field(None, ge=1, description="Default: array.cols")
    l2: Optional[int] = Field(None, ge=1, description="Default: array.rows")
    export_weights: bool = Field(False, description="Write weights.csv (large)")

    def solve_options(self) -> SolveOptions:
        return SolveOptions(**self.model_dump(include=set(SolveOptions.model_fields)))

    def grid(self, array: DetectorArray, n1: int, n2: int) -> GridSpec:
        return GridSpec(
            n1=n1,
            n2=n2,
            l1=self.l1 if self.l1 is not None else array.cols,
            l2=self.l2 if self.l2 is not None else array.rows,
        )


class PathsConfig(BaseModel):
    out_dir: Path = Path("ssi-out")

    model_config = ConfigDict(extra="forbid")


class PipelineConfig(BaseModel):
    seed: Optional[int] = Field(None, ge=0, lt=2**64)
    template_index: int = Field(0, ge=0, description="Frame registered against (row-major)")
    workers: int = Field(1, ge=1, description="Registration threads")
    geometry: OpticalGeometry = Field(default_factory=OpticalGeometry)
    array: DetectorArray = Field(default_factory=DetectorArray)
    spi: SpiOptions = Field(default_factory=SpiOptions)
    registration: RegistrationOptions = Field(default_factory=RegistrationOptions)
    superres: SuperResConfig = Field(default_factory=SuperResConfig)
    scene: SceneConfig = Field(default_factory=SceneConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def check_consistency(self) -> "PipelineConfig":
        if self.spi.noise.kind is not NoiseKind.NONE and self.seed is None:
            raise ValueError("a seed is required when noise is enabled")
        if self.template_index >= self.array.count:
            raise ValueError(
                f"template_index {self.template_index} out of range for "
                f"{self.array.count} detectors"
            )
        return self

    def echo(self) -> Dict[str, Any]:
        """Config as recorded in the report (output locations left out)."""
        return self.model_dump(mode="json", exclude={"paths"})


def _parse_scalar(text: str) -> Any:
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(raw: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """Apply ``section.key=value`` assignments to a raw config mapping in place."""
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"override {item!r} is not of the form key=value")
        *parents, leaf = key.strip().split(".")
        node = raw
        for part in parents:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ValueError(f"override {item!r}: {part!r} is not a section")
            node = child
        node[leaf] = _parse_scalar(value.strip())
    return raw


def load_config(path: Optional[Path] = None, overrides: Sequence[str] = ()) -> PipelineConfig:
    """Read a TOML config (or start from defaults), apply overrides, validate."""
    raw: Dict[str, Any] = {}
    if path is not None:
        with Path(path).open("rb") as handle:
            raw = tomllib.load(handle)
    return PipelineConfig.model_validate(apply_overrides(raw, overrides))
