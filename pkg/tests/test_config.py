"""
Tests for configuration loading, validation and command-line overrides.
"""
from pathlib import Path

import pytest
from pydantic import ValidationError

from models.acquisition import NoiseKind, PatternScheme
from models.config import PipelineConfig, SceneSource, apply_overrides, load_config
from models.geometry import DetectorArray

CONFIG_TEXT = """
seed = 42
template_index = 3

[geometry]
z2 = -0.04

[array]
rows = 4
cols = 4
pitch = 3.1

[spi]
basis_side = 32
scheme = "raw_bipolar"

[spi.noise]
kind = "gaussian"
snr_db = 30.0

[superres]
sigma = 0.3
l1 = 3

[scene.target]
side = 192
"""


@pytest.fixture
def config_path(tmp_path) -> Path:
    path = tmp_path / "ssi.toml"
    path.write_text(CONFIG_TEXT)
    return path


def test_defaults_are_valid():
    config = PipelineConfig()
    assert config.seed is None
    assert config.array.count == 36
    assert config.spi.basis_side == 64
    assert config.scene.source is SceneSource.BAR_TARGET
    assert config.superres.lambda_reg is None


def test_toml_file_is_loaded(config_path):
    config = load_config(config_path)
    assert config.seed == 42
    assert config.geometry.z2 == -0.04
    assert config.spi.scheme is PatternScheme.RAW_BIPOLAR
    assert config.spi.noise.kind is NoiseKind.GAUSSIAN
    assert config.scene.target.side == 192


def test_overrides_are_typed_and_validated(config_path):
    config = load_config(
        config_path,
        ["superres.sigma=0.25", "seed=7", "spi.scheme=differential_pairs", "spi.through_spi=false"],
    )
    assert config.superres.sigma == 0.25
    assert config.seed == 7
    assert config.spi.scheme is PatternScheme.DIFFERENTIAL_PAIRS
    assert config.spi.through_spi is False
    with pytest.raises(ValidationError):
        load_config(config_path, ["superres.sigma=3"])


def test_override_creates_missing_sections():
    raw = apply_overrides({}, ["registration.epsilon=1e-5", 'paths.out_dir="out dir"'])
    assert raw == {"registration": {"epsilon": 1e-5}, "paths": {"out_dir": "out dir"}}


@pytest.mark.parametrize("override", ["seed", "=3", "seed.value=1"])
def test_malformed_overrides_are_rejected(override):
    with pytest.raises(ValueError):
        apply_overrides({"seed": 1}, [override])


def test_unknown_keys_are_errors(tmp_path):
    with pytest.raises(ValidationError):
        PipelineConfig.model_validate({"sede": 1})
    with pytest.raises(ValidationError):
        PipelineConfig.model_validate({"array": {"rowz": 2}})
    with pytest.raises(ValidationError):
        load_config(None, ["superres.sigmaa=0.3"])


def test_noise_needs_a_seed():
    with pytest.raises(ValidationError, match="seed"):
        PipelineConfig.model_validate({"spi": {"noise": {"kind": "gaussian", "sigma": 0.01}}})


def test_template_index_must_name_a_detector():
    with pytest.raises(ValidationError):
        PipelineConfig(array=DetectorArray(rows=2, cols=2), template_index=4)


def test_file_scene_needs_a_path():
    with pytest.raises(ValidationError):
        PipelineConfig.model_validate({"scene": {"source": "file"}})


def test_magnification_defaults_to_array_shape(config_path):
    config = load_config(config_path)
    grid = config.superres.grid(config.array, 32, 32)
    assert (grid.l1, grid.l2) == (3, 4)
    assert (grid.hr_width, grid.hr_height) == (96, 128)


def test_solve_options_leave_out_grid_fields(config_path):
    opts = load_config(config_path).superres.solve_options()
    assert opts.sigma == 0.3
    assert not hasattr(opts, "l1")


def test_echo_leaves_out_paths(tmp_path):
    config = load_config(None, [f'paths.out_dir="{tmp_path.as_posix()}"'])
    echo = config.echo()
    assert "paths" not in echo
    assert echo["array"]["rows"] == 6
