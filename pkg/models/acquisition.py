from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class PatternScheme(str, Enum):
    DIFFERENTIAL_PAIRS = "differential_pairs"
    RAW_BIPOLAR = "raw_bipolar"


class NoiseKind(str, Enum):
    NONE = "none"
    GAUSSIAN = "gaussian"
    POISSON = "poisson"


class NoiseModel(BaseModel):
    """Per-measurement noise.

    ``gaussian`` takes either an absolute ``sigma`` or an ``snr_db`` measured
    against the RMS of the bipolar Hadamard coefficients, which makes it equal
    to the SNR of the reconstructed image. ``poisson`` draws counts with mean
    ``value * scale`` and divides by ``scale``.
    """

    kind: NoiseKind = NoiseKind.NONE
    sigma: Optional[float] = Field(None, ge=0)
    snr_db: Optional[float] = None
    scale: Optional[float] = Field(None, gt=0)

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def check_parameters(self) -> "NoiseModel":
        if self.kind is NoiseKind.GAUSSIAN:
            if (self.sigma is None) == (self.snr_db is None):
                raise ValueError("gaussian noise needs exactly one of sigma or snr_db")
        if self.kind is NoiseKind.POISSON and self.scale is None:
            raise ValueError("poisson noise needs a scale")
        return self


class SpiOptions(BaseModel):
    basis_side: int = Field(64, ge=1, description="Low-res image side N (power of two)")
    scheme: PatternScheme = PatternScheme.DIFFERENTIAL_PAIRS
    through_spi: bool = Field(
        True, description="Run each frame through Hadamard measurement + reconstruction"
    )
    noise: NoiseModel = Field(default_factory=NoiseModel)

    model_config = ConfigDict(extra="forbid")

    @field_validator("basis_side")
    @classmethod
    def validate_power_of_two(cls, v: int) -> int:
        if v & (v - 1):
            raise ValueError("basis_side must be a power of two")
        return v
