from enum import Enum
from typing import List

from pydantic import BaseModel, ConfigDict, Field, model_validator


class BarOrientation(str, Enum):
    VERTICAL = "vertical"      # bars vary along x
    HORIZONTAL = "horizontal"  # bars vary along y


class BarGroup(BaseModel):
    """Alternating bars starting at the rectangle origin.

    Bright bar ``i`` covers ``[origin + i·period, origin + i·period + period/2)``
    along the varying axis (pixel-edge coordinates).
    """

    period: float = Field(..., ge=2, description="Bar period, pixels")
    orientation: BarOrientation = BarOrientation.VERTICAL
    bar_count: int = Field(..., ge=2)
    x: int = Field(..., ge=0)
    y: int = Field(..., ge=0)
    width: int = Field(..., ge=1)
    height: int = Field(..., ge=1)

    model_config = ConfigDict(extra="forbid")

    @property
    def extent(self) -> float:
        """Length covered by the bars along the varying axis."""
        return (self.bar_count - 0.5) * self.period

    @model_validator(mode="after")
    def check_bars_fit(self) -> "BarGroup":
        along = self.width if self.orientation is BarOrientation.VERTICAL else self.height
        if self.extent > along:
            raise ValueError(
                f"{self.bar_count} bars of period {self.period} need {self.extent} px, "
                f"rectangle offers {along}"
            )
        return self

    def overlaps(self, other: "BarGroup") -> bool:
        return not (
            self.x + self.width <= other.x
            or other.x + other.width <= self.x
            or self.y + self.height <= other.y
            or other.y + other.height <= self.y
        )


class BarTargetSpec(BaseModel):
    side: int = Field(384, ge=1, description="Image side length, pixels")
    groups: List[BarGroup] = Field(default_factory=list)
    foreground: float = Field(1.0, ge=0, le=1)
    background: float = Field(0.0, ge=0, le=1)

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def check_layout(self) -> "BarTargetSpec":
        for index, group in enumerate(self.groups):
            if group.x + group.width > self.side or group.y + group.height > self.side:
                raise ValueError(f"group {index} rectangle leaves the {self.side}px image")
            for other_index, other in enumerate(self.groups[:index]):
                if group.overlaps(other):
                    raise ValueError(f"groups {other_index} and {index} overlap")
        return self
