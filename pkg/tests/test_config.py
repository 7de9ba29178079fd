"""Tests for run configuration files and environment settings."""
import pytest
from pydantic import ValidationError

from app.core.config import RunConfig, Settings, load_run_config
from app.core.exceptions import ConfigurationError


def write_config(tmp_path, text):
    path = tmp_path / "run.cfg"
    path.write_text(text)
    return path


def test_defaults():
    config = load_run_config()
    assert config.data.frames == 2000
    assert config.data.script == [(0, "dark-indoor"), (50, "bright-outdoor")]
    assert config.model.modalities == ["rgb", "depth"]
    assert config.detect.scales == [32, 48, 64]
    assert config.eval.iou == 0.6


def test_file_values_and_comments(tmp_path):
    path = write_config(tmp_path, "# comment\n\ndata.frames=20\ndetect.scales=32,64\nmodel.modalities=depth,rgb\n")
    config = load_run_config(path)
    assert config.data.frames == 20
    assert config.detect.scales == [32, 64]
    assert config.model.modalities == ["depth", "rgb"]


def test_unknown_key_names_the_line(tmp_path):
    path = write_config(tmp_path, "data.frames=20\n# note\ntrian.lr=0.1\n")
    with pytest.raises(ConfigurationError, match=r"unknown key 'trian.lr' at line 3"):
        load_run_config(path)


def test_unknown_field_in_known_section(tmp_path):
    with pytest.raises(ConfigurationError, match="train.rate"):
        load_run_config(write_config(tmp_path, "train.rate=0.1\n"))


def test_invalid_value_names_key_and_line(tmp_path):
    with pytest.raises(ConfigurationError, match=r"train.lr' at line 2"):
        load_run_config(write_config(tmp_path, "train.epochs=2\ntrain.lr=-1\n"))


def test_malformed_line(tmp_path):
    with pytest.raises(ConfigurationError, match="line 1"):
        load_run_config(write_config(tmp_path, "data.frames\n"))


def test_overrides_and_seed(tmp_path):
    path = write_config(tmp_path, "train.lr=0.1\n")
    config = load_run_config(path, overrides=["train.lr=0.2", "data.script=0:blur"], seed=99)
    assert config.train.lr == 0.2
    assert config.data.script == [(0, "blur")]
    assert config.data.seed == 99 and config.train.seed == 99

    with pytest.raises(ConfigurationError, match="--set"):
        load_run_config(overrides=["trian.lr=0.1"])


def test_bad_modality_and_depth_range():
    with pytest.raises(ConfigurationError):
        load_run_config(overrides=["model.modalities=rgb,thermal"])
    with pytest.raises(ConfigurationError):
        load_run_config(overrides=["data.depth_min=5", "data.depth_max=2"])


def test_resolved_config_reloads_identically(tmp_path):
    config = load_run_config(overrides=["data.frames=30", "detect.scales=48"])
    text = config.to_text()
    assert "data.script=0:dark-indoor,50:bright-outdoor\n" in text
    assert load_run_config(write_config(tmp_path, text)) == config
    assert isinstance(config, RunConfig)


def test_settings_from_environment(monkeypatch):
    monkeypatch.setenv("MAX_THREADS", "3")
    monkeypatch.setenv("LOG_LEVEL", "DEBUG")
    settings = Settings()
    assert settings.max_threads == 3
    assert settings.log_level == "DEBUG"

    monkeypatch.setenv("MAX_THREADS", "0")
    with pytest.raises(ValidationError):
        Settings()
