"""
Tests for key=value run configuration files and flag overrides.
"""

import pytest

from cycleseg.errors import ConfigError, IoError
from cycleseg.runconfig import RunConfig, load_run_config, write_resolved


def test_defaults():
    cfg = load_run_config()
    assert cfg == RunConfig()
    assert cfg.roi_size == (2, 2)
    assert cfg.stage_channels == (8, 16, 32)
    assert cfg.k_values == (2, 3, 4, 5)
    assert cfg.strategy_list == ("a", "b", "c", "d")
    assert cfg.held_out_classes == ("ring",)


def test_file_with_comments(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("# desk run\nsteps=7\nlr=0.0005\nroi=raw\nstandard_lstm_candidate=true\n")
    cfg = load_run_config(path)
    assert cfg.steps == 7
    assert cfg.lr == 0.0005
    assert cfg.roi_size is None
    assert cfg.standard_lstm_candidate is True


def test_overrides_beat_file(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("steps=7\nseed=3\n")
    cfg = load_run_config(path, {"steps": "2", "seed": None})
    assert cfg.steps == 2
    assert cfg.seed == 3


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("stepz=7\n")
    with pytest.raises(ConfigError, match="stepz"):
        load_run_config(path)


@pytest.mark.parametrize("overrides", [
    {"steps": "many"},
    {"standard_lstm_candidate": "maybe"},
    {"exchange": "M_add"},
    {"loss": "dice"},
    {"k": "1"},
    {"roi": "2by2"},
    {"levels": "4"},
    {"image_size": "60"},
    {"k_range": "1,2"},
])
def test_invalid_values(overrides):
    with pytest.raises(ConfigError):
        load_run_config(None, overrides)


def test_missing_file(tmp_path):
    with pytest.raises(IoError):
        load_run_config(tmp_path / "absent.env")


def test_resolved_config_reproduces_run(tmp_path):
    cfg = load_run_config(None, {"steps": "7", "roi": "4x4", "standard_lstm_candidate": "yes", "lr": "1e-5"})
    path = write_resolved(cfg, tmp_path / "out" / "resolved_config.env")
    text = path.read_text()
    assert text.startswith("# resolved run configuration\n")
    assert "standard_lstm_candidate=true\n" in text
    assert load_run_config(path) == cfg
