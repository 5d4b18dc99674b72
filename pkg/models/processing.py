from typing import Optional

from pydantic import BaseModel, ConfigDict, Field


class RegistrationOptions(BaseModel):
    epsilon: float = Field(1e-4, gt=0, description="Convergence threshold on |Δp|, px")
    max_iterations: int = Field(100, ge=1)
    normalize: bool = Field(
        True, description="Zero-mean / unit-RMS both images over the summation region"
    )
    border_margin: int = Field(2, ge=0, description="Pixels excluded at every edge")
    prefilter_sigma: float = Field(
        1.5, ge=0, description="Gaussian smoothing applied to both images before registering, px; 0 disables"
    )

    model_config = ConfigDict(extra="forbid")


class SolveOptions(BaseModel):
    """Weight-matrix and solver settings. ``None`` selects the documented default."""

    lambda_reg: Optional[float] = Field(
        None, ge=0, description="Tikhonov coefficient; default 1e-3 x mean row-sum of PᵀP"
    )
    cg_tolerance: float = Field(1e-8, gt=0, description="Relative residual stop")
    cg_max_iterations: int = Field(2000, ge=1)
    sigma: float = Field(0.5, gt=0, le=1, description="Gaussian std (dimensionless)")
    truncation_radius: Optional[float] = Field(
        None, gt=0, description="High-res pixels; default 3·σ·√(L1·L2)"
    )

    model_config = ConfigDict(extra="forbid")

    def radius_for(self, l1: int, l2: int) -> float:
        if self.truncation_radius is not None:
            return self.truncation_radius
        return 3.0 * self.sigma * (l1 * l2) ** 0.5


class GridSpec(BaseModel):
    """High-res grid: ``(l1·n1) x (l2·n2)`` where n1 counts columns and n2 rows."""

    n1: int = Field(..., ge=1, description="Low-res width N1")
    n2: int = Field(..., ge=1, description="Low-res height N2")
    l1: int = Field(..., ge=1, description="Horizontal magnification factor L1")
    l2: int = Field(..., ge=1, description="Vertical magnification factor L2")

    model_config = ConfigDict(extra="forbid", frozen=True)

    @property
    def hr_width(self) -> int:
        return self.l1 * self.n1

    @property
    def hr_height(self) -> int:
        return self.l2 * self.n2

    @property
    def lr_size(self) -> int:
        return self.n1 * self.n2

    @property
    def hr_size(self) -> int:
        return self.hr_width * self.hr_height
