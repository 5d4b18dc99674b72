"""
Shared pytest configuration and fixtures.

This conftest.py provides:
- A seeded random generator so every test is reproducible
- Smooth, band-limited scenes for registration and pipeline tests
- Small pipeline configurations writing into a temporary directory
"""
import copy
from pathlib import Path
from typing import Any, Callable, Dict

import numpy as np
import pytest
from scipy import ndimage

from models.config import PipelineConfig
from ssi import fileio
from ssi.types import Image

SEED = 20240607

# Detector pitch (mm) giving half-pixel steps with the default geometry.
HALF_PIXEL_PITCH = 6.3


def make_smooth_scene(rng: np.random.Generator, side: int, blur: float) -> Image:
    """Gaussian-filtered noise rescaled to [0, 1]."""
    smooth = ndimage.gaussian_filter(rng.random((side, side)), blur, mode="wrap")
    smooth -= smooth.min()
    smooth /= smooth.max()
    return Image(smooth)


def deep_merge(base: Dict[str, Any], updates: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in updates.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(SEED)


@pytest.fixture
def smooth_scene(rng) -> Callable[..., Image]:
    def factory(side: int = 128, blur: float = 4.0) -> Image:
        return make_smooth_scene(rng, side, blur)

    return factory


@pytest.fixture
def scene_file(tmp_path) -> Path:
    """64x64 smooth scene stored as SSIF (float32 exact)."""
    scene = make_smooth_scene(np.random.default_rng(SEED), 64, 4.0)
    return fileio.write_ssif(tmp_path / "scene.ssif", scene)


@pytest.fixture
def make_config(tmp_path, scene_file) -> Callable[..., PipelineConfig]:
    """
    Small configuration: 32x32 frames from a 2x2 array with half-pixel steps,
    scene oversampled 2x, smooth file scene unless overridden.
    """

    base = {
        "spi": {"basis_side": 32},
        "array": {"rows": 2, "cols": 2, "pitch": HALF_PIXEL_PITCH},
        "scene": {"source": "file", "path": str(scene_file), "oversample": 2},
        "superres": {"sigma": 0.3},
        "paths": {"out_dir": str(tmp_path / "run")},
    }

    def factory(**updates: Any) -> PipelineConfig:
        return PipelineConfig.model_validate(deep_merge(base, updates))

    return factory
