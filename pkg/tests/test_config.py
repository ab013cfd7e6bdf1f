"""Tests for the config registry and its text format."""

import pytest

from fastmap import config


class TestDefaults:
    def test_published_values(self):
        cfg = config.PipelineConfig()
        assert cfg.tau == 0.01
        assert cfg.focal_samples == 100
        assert cfg.fov_min_deg == 20.0 and cfg.fov_max_deg == 160.0
        assert cfg.translation_inits == 3

    def test_validation_rejects_bad_values(self):
        with pytest.raises(ValueError):
            config.PipelineConfig(tau=0.0)
        with pytest.raises(ValueError):
            config.PipelineConfig(rotation_steps=0)
        with pytest.raises(ValueError):
            config.PipelineConfig(fov_min_deg=90.0, fov_max_deg=30.0)
        with pytest.raises(ValueError):
            config.PipelineConfig(prune_threshold_start=0.001,
                                  prune_threshold_end=0.01)


class TestTextFormat:
    def test_roundtrip(self):
        cfg = config.PipelineConfig(rotation_steps=123, tau=0.05,
                                    refine_focal=False)
        assert config.loads(config.serialize(cfg)) == cfg

    def test_loads_with_comments_and_defaults(self):
        cfg = config.loads("# comment\nrotation_steps = 7  # trailing\n\n")
        assert cfg.rotation_steps == 7
        assert cfg.tau == config.PipelineConfig().tau

    def test_bool_parsing(self):
        assert config.loads("refine_focal = off").refine_focal is False
        assert config.loads("refine_focal = TRUE").refine_focal is True
        with pytest.raises(ValueError):
            config.loads("refine_focal = maybe")

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown key"):
            config.loads("does_not_exist = 3")

    def test_malformed_line_rejected(self):
        with pytest.raises(ValueError, match="expected"):
            config.loads("just some words")

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            config.loads("tau = inf")

    def test_file_roundtrip(self, tmp_path):
        cfg = config.PipelineConfig(translation_steps=11)
        path = tmp_path / "cfg.txt"
        config.save(cfg, path)
        assert config.load(path) == cfg

    def test_load_none_gives_defaults(self):
        assert config.load(None) == config.PipelineConfig()
