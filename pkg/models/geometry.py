from pydantic import BaseModel, ConfigDict, Field


class OpticalGeometry(BaseModel):
    """Everything the shift relation and the depth-of-field estimate need."""

    z1: float = Field(50.0, gt=0, description="Axial source-to-focal-plane distance, mm")
    z2: float = Field(0.04, description="Specimen defocus distance, mm (signed)")
    magnification: float = Field(10.0, gt=0, description="Microscope magnification M")
    na: float = Field(0.25, gt=0, lt=1.5, description="Numerical aperture")
    wavelength: float = Field(0.633, gt=0, description="Illumination wavelength, μm")
    encoding_pixel: float = Field(
        86.4, gt=0, description="Pattern pixel size at the modulator plane, μm"
    )
    lr_pixel_pitch: float = Field(
        100.8, gt=0, description="Effective low-res pixel pitch at the image plane, μm"
    )

    model_config = ConfigDict(
        extra="forbid",
        json_schema_extra={
            "examples": [{
                "z1": 50.0,
                "z2": 0.04,
                "magnification": 10.0,
                "na": 0.25,
                "wavelength": 0.633,
                "encoding_pixel": 86.4,
                "lr_pixel_pitch": 100.8,
            }]
        },
    )


class DetectorArray(BaseModel):
    """Grid of single-pixel detectors formed by binning camera pixels."""

    rows: int = Field(6, ge=1)
    cols: int = Field(6, ge=1)
    pitch: float = Field(2.1, gt=0, description="Centre-to-centre detector distance, mm")
    binning: int = Field(120, ge=1, description="Camera pixels binned per detector side")

    model_config = ConfigDict(extra="forbid")

    @property
    def count(self) -> int:
        return self.rows * self.cols
