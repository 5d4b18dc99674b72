import math
from typing import Annotated, Any, Dict, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, PlainSerializer


def _finite_or_label(value: float) -> Union[float, str, None]:
    if math.isnan(value):
        return None
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


# Floats that may be infinite (equal images, failed frames) serialize as "inf".
ReportFloat = Annotated[
    float, PlainSerializer(_finite_or_label, return_type=Union[float, str, None], when_used="json")
]


class ImageRange(BaseModel):
    """Sidecar of a 16-bit PGM: samples map linearly from [lo, hi]."""

    lo: float
    hi: float

    model_config = ConfigDict(extra="forbid")


class ArtifactRecord(BaseModel):
    path: str = Field(..., description="Relative to the output directory")
    sha256: str


class ShiftRow(BaseModel):
    frame: int
    dx: ReportFloat
    dy: ReportFloat
    iterations: int
    converged: bool
    true_dx: Optional[ReportFloat] = None
    true_dy: Optional[ReportFloat] = None


class GroupContrast(BaseModel):
    group: int
    period_px: float = Field(..., description="Bar period on the target grid, pixels")
    period_lr_px: float = Field(..., description="Bar period in low-res pixels")
    orientation: str
    high_res: ReportFloat
    template: ReportFloat
    best_frame: ReportFloat = Field(..., description="Largest contrast over all low-res frames")
    resolved: bool


class SolverDiagnostics(BaseModel):
    iterations: int
    relative_residual: ReportFloat
    converged: bool
    lambda_reg: ReportFloat
    nnz: int
    l1: int
    l2: int


class GeometrySummary(BaseModel):
    depth_of_field_um: ReportFloat
    within_depth_of_field: bool
    illumination_cutoff_per_um: ReportFloat
    modulator_cutoff_per_um: ReportFloat
    undersampled: bool
    shift_per_pitch_px: ReportFloat
    lr_pixels_per_target_pixel: ReportFloat = Field(
        ..., description="Bar periods on the target grid divide by the oversample factor"
    )


class QualitySummary(BaseModel):
    psnr_high_res: ReportFloat
    psnr_nearest: ReportFloat
    psnr_cubic: ReportFloat
    psnr_gain_over_nearest: ReportFloat


class RunReport(BaseModel):
    seed: Optional[int]
    config: Dict[str, Any]
    geometry: GeometrySummary
    shifts: List[ShiftRow]
    solver: SolverDiagnostics
    quality: Optional[QualitySummary] = None
    contrasts: List[GroupContrast] = Field(default_factory=list)
    artifacts: List[ArtifactRecord] = Field(default_factory=list)

    model_config = ConfigDict(extra="forbid")


class SweepRow(BaseModel):
    rows: int
    cols: int
    pitch_mm: float
    magnification: int
    finest_contrast: ReportFloat
    psnr_high_res: Optional[ReportFloat] = Field(
        None, description="Only when the high-res grid divides the scene grid"
    )


class SweepReport(BaseModel):
    seed: Optional[int]
    rows: List[SweepRow]
