from pathlib import Path

import pytest

from dance_retarget.config import (
    PipelineConfig,
    config_from_dict,
    config_hash,
    env_defaults,
    load_config,
    log_level,
)
from dance_retarget.errors import ConfigError, FormatError

DOCUMENT = """
seed = 7
disturbances = ["40,0,0@2.0+0.1"]

[paths]
clip = "clip.json"

[optimize]
horizon = 0.8

[optimize.settings]
dt = 0.04

[optimize.settings.weights]
force = 1e-2

[world]
carpet = true
"""


@pytest.fixture
def config_file(tmp_path):
    (tmp_path / "clip.json").write_text("{}")
    path = tmp_path / "dance.toml"
    path.write_text(DOCUMENT)
    return path


def test_toml_overlays_the_defaults(config_file):
    config = load_config(str(config_file))
    assert config.seed == 7
    assert config.horizon == pytest.approx(0.8)
    assert config.optimize.settings.dt == pytest.approx(0.04)
    assert config.optimize.settings.weights.force == pytest.approx(1e-2)
    assert config.optimize.settings.weights.base == pytest.approx(100.0)
    assert config.world.carpet
    assert config.pushes()[0].start == pytest.approx(2.0)
    assert config.source == str(config_file)


def test_input_paths_are_relative_to_the_config_file(config_file):
    config = load_config(str(config_file))
    assert Path(config.paths.clip) == config_file.parent / "clip.json"
    config.validate()


def test_execution_follows_the_pipeline_settings(config_file):
    config = load_config(str(config_file))
    execution = config.execution_config()
    assert execution.horizon == pytest.approx(0.8)
    assert execution.ocp.dt == pytest.approx(0.04)
    assert execution.seed == 7


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigError, match="unknown key 'horizn'"):
        config_from_dict({"optimize": {"horizn": 1.0}})
    with pytest.raises(ConfigError, match="unknown top-level key"):
        config_from_dict({"solver": {}})
    with pytest.raises(ConfigError, match="must be a table"):
        config_from_dict({"world": 3})


def test_broken_toml_is_a_format_error(tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text("[optimize\nhorizon = 1.0\n")
    with pytest.raises(FormatError) as info:
        load_config(str(path))
    assert info.value.path == str(path)


def test_missing_file_is_a_format_error(tmp_path):
    with pytest.raises(FormatError, match="cannot read file"):
        load_config(str(tmp_path / "absent.toml"))


@pytest.mark.parametrize(
    "overrides, message",
    [
        ({"optimize.horizon": 0.1}, "horizon must lie in"),
        ({"optimize.window_stride": 0}, "window_stride"),
        ({"paths.model": "absent-model.json"}, "does not exist"),
        ({"disturbances": ("nonsense",)}, "cannot parse push"),
    ],
)
def test_validation_errors(overrides, message):
    with pytest.raises(ConfigError, match=message):
        PipelineConfig().with_overrides(**overrides).validate()


def test_overrides_ignore_none_and_reject_unknown_keys():
    config = PipelineConfig().with_overrides(seed=None, **{"optimize.horizon": 0.6})
    assert config.seed == 0
    assert config.horizon == pytest.approx(0.6)
    with pytest.raises(ConfigError, match="unknown configuration key"):
        PipelineConfig().with_overrides(**{"optimize.horizn": 0.6})


def test_environment_defaults():
    overrides = env_defaults({"DANCE_OUTPUT_DIR": "results", "DANCE_SEED": "5", "DANCE_LOG_LEVEL": "debug"})
    assert overrides == {"paths.output_dir": "results", "seed": 5}
    assert env_defaults({}) == {}
    with pytest.raises(ConfigError, match="DANCE_SEED"):
        env_defaults({"DANCE_SEED": "five"})


def test_hash_ignores_the_output_directory():
    base = PipelineConfig()
    moved = base.with_overrides(**{"paths.output_dir": "elsewhere"})
    assert config_hash(base) == config_hash(moved)
    assert len(config_hash(base)) == 64
    assert config_hash(base) != config_hash(base.with_overrides(**{"optimize.horizon": 0.8}))
    assert config_hash(base) != config_hash(base.with_overrides(seed=1))


def test_log_level_from_the_command_line():
    assert log_level("debug") == "DEBUG"
