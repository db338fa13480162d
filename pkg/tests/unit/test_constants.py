"""Tests for configuration loading in constants module."""

import pytest

from src.base import PipelineConfig
from src.constants import (
    DEFAULT_CONFIG,
    _deep_merge,
    _get_int_env,
    _get_str_env,
    build_config,
    load_pipeline_config,
)
from src.exceptions import ConfigError


class TestDefaults:
    """Tests for the packaged config.yaml."""

    def test_default_orientations(self):
        """Defaults are K=4 orientations and M=2 tensors."""
        assert DEFAULT_CONFIG.k_count == 4
        assert DEFAULT_CONFIG.m_count == 2

    def test_packaged_file_matches_dataclass(self):
        """config.yaml restates the dataclass defaults."""
        assert DEFAULT_CONFIG == PipelineConfig()


class TestValidation:
    """Tests for PipelineConfig.validate through build_config."""

    def test_m_above_family_size(self):
        """M may not exceed K(K+1)/2."""
        with pytest.raises(ConfigError, match=r"m_count must be <= K\(K\+1\)/2 = 10, got 11"):
            build_config({"k_count": 4, "m_count": 11})

    def test_m_at_family_size(self):
        """M = K(K+1)/2 is allowed."""
        assert build_config({"k_count": 4, "m_count": 10}).m_count == 10

    @pytest.mark.parametrize(
        "data",
        [
            {"k_count": 0},
            {"max_passes": 0},
            {"iou_min": 0.0},
            {"diffusion": {"step": 0.5}},
            {"inpaint": {"solver": "multigrid"}},
            {"inpaint": {"omega": 2.0}},
            {"classifier": {"step_scale": 1.5}},
        ],
    )
    def test_out_of_range(self, data):
        """Bounds violations raise ConfigError."""
        with pytest.raises(ConfigError):
            build_config(data)

    def test_unknown_key(self):
        """Strict parsing rejects misspelled keys."""
        with pytest.raises(ConfigError):
            build_config({"k_cuont": 3})

    def test_ints_accepted_as_floats(self):
        """A YAML integer is fine where a float is expected."""
        assert build_config({"diffusion": {"kappa": 20}}).diffusion.kappa == 20.0


class TestLoadPipelineConfig:
    """Tests for load_pipeline_config."""

    def test_file_overrides_defaults(self, tmp_path):
        """Nested sections merge key by key."""
        path = tmp_path / "cfg.yaml"
        path.write_text("k_count: 6\nmorphology:\n  area_min: 10\n", encoding="utf-8")
        config = load_pipeline_config(path)
        assert config.k_count == 6
        assert config.morphology.area_min == 10
        assert config.morphology.closing_size == DEFAULT_CONFIG.morphology.closing_size

    def test_json_file(self, tmp_path):
        """JSON config files load too."""
        path = tmp_path / "cfg.json"
        path.write_text('{"m_count": 3}', encoding="utf-8")
        assert load_pipeline_config(path).m_count == 3

    def test_overrides_skip_none(self):
        """Unset CLI flags leave the configured value alone."""
        config = load_pipeline_config(overrides={"k_count": None, "m_count": 3})
        assert config.k_count == DEFAULT_CONFIG.k_count
        assert config.m_count == 3

    def test_empty_file(self, tmp_path):
        """An empty file means defaults."""
        path = tmp_path / "empty.yaml"
        path.write_text("", encoding="utf-8")
        assert load_pipeline_config(path) == DEFAULT_CONFIG

    def test_non_mapping_file(self, tmp_path):
        """A list at top level is rejected."""
        path = tmp_path / "list.yaml"
        path.write_text("- 1\n- 2\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_pipeline_config(path)

    def test_missing_file(self, tmp_path):
        """Unreadable files raise ConfigError."""
        with pytest.raises(ConfigError):
            load_pipeline_config(tmp_path / "absent.yaml")

    def test_deep_merge_keeps_base(self):
        """Merging does not mutate the base mapping."""
        base = {"a": {"b": 1, "c": 2}}
        merged = _deep_merge(base, {"a": {"b": 5}})
        assert merged == {"a": {"b": 5, "c": 2}}
        assert base == {"a": {"b": 1, "c": 2}}


class TestEnvironment:
    """Tests for environment variable helpers."""

    def test_int_env(self, monkeypatch):
        """Integers are parsed from the environment."""
        monkeypatch.setenv("CST_TEST_INT", "7")
        assert _get_int_env("CST_TEST_INT", 1) == 7

    def test_int_env_invalid(self, monkeypatch):
        """Bad values fall back to the default."""
        monkeypatch.setenv("CST_TEST_INT", "many")
        assert _get_int_env("CST_TEST_INT", 3) == 3

    def test_int_env_blank(self, monkeypatch):
        """Blank values fall back to the default."""
        monkeypatch.setenv("CST_TEST_INT", "  ")
        assert _get_int_env("CST_TEST_INT", 4) == 4

    def test_str_env(self, monkeypatch):
        """Strings are stripped; missing keys give the default."""
        monkeypatch.setenv("CST_TEST_STR", " debug ")
        monkeypatch.delenv("CST_TEST_MISSING", raising=False)
        assert _get_str_env("CST_TEST_STR", "INFO") == "debug"
        assert _get_str_env("CST_TEST_MISSING", "INFO") == "INFO"
