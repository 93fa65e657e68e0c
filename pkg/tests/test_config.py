"""
Tests for run settings and their sources.
"""
import json
from pathlib import Path

import pydantic
import pytest

from python_afmm.config import RunSettings, load_settings, settings_from_env, settings_from_file


class TestRunSettings:
    """Test defaults and validation."""

    def test_defaults(self):
        """Test the documented defaults."""
        settings = RunSettings()
        assert settings.method == "afmm"
        assert settings.alpha == 0.1 and settings.tol == 1e-10 and settings.band_width == 9.0
        assert settings.n_list == [25, 50, 100, 200]
        assert settings.regions == ("whole", "band")

    @pytest.mark.parametrize("values", [{"alpha": 0.5}, {"alpha": 0.0}, {"n": 3}, {"shape": "torus"},
                                        {"hi": -3.0}, {"method": "level-set"}, {"workers": 0},
                                        {"shape": "circle", "input": "field.vtk"}])
    def test_invalid(self, values):
        """Test that out-of-range or conflicting values are rejected."""
        with pytest.raises(pydantic.ValidationError):
            RunSettings(**values)

    def test_log_level_is_case_insensitive(self):
        """Test that a lower-case level name is accepted."""
        assert RunSettings(log_level="debug").log_level == "DEBUG"

    def test_echo_is_json(self):
        """Test that the echoed settings serialize."""
        echoed = RunSettings(out=Path("results")).echo()
        assert json.loads(json.dumps(echoed))["out"] == "results"


class TestSources:
    """Test merging of environment, config files and overrides."""

    def test_environment(self, monkeypatch, tmp_path):
        """Test AFMM_* variables, including list values."""
        monkeypatch.setenv("AFMM_N", "64")
        monkeypatch.setenv("AFMM_N_LIST", "20, 40;80")
        monkeypatch.setenv("AFMM_SHAPE", "ellipse")
        found = settings_from_env(str(tmp_path / "missing.env"))
        assert found == {"shape": "ellipse", "n": "64", "n_list": [20, 40, 80]}
        settings = load_settings()
        assert settings.n == 64 and settings.n_list == [20, 40, 80]

    def test_precedence(self, monkeypatch, tmp_path):
        """Test environment < config file < overrides."""
        monkeypatch.setenv("AFMM_N", "64")
        monkeypatch.setenv("AFMM_ALPHA", "0.2")
        config = tmp_path / "run.json"
        config.write_text(json.dumps({"n": 80, "band_width": 6.0}))
        settings = load_settings(config, {"band_width": 4.0, "alpha": None})
        assert settings.n == 80
        assert settings.band_width == 4.0
        assert settings.alpha == 0.2

    def test_toml(self, tmp_path):
        """Test a TOML config file."""
        config = tmp_path / "run.toml"
        config.write_text('shape = "star"\nn_list = [30, 60, 120]\nmethod = "fmm"\n')
        settings = load_settings(config, use_env=False)
        assert settings.shape == "star" and settings.method == "fmm"
        assert settings.n_list == [30, 60, 120]

    def test_unknown_key(self, tmp_path):
        """Test that a misspelled setting in a file is reported."""
        config = tmp_path / "run.json"
        config.write_text(json.dumps({"nodes": 10}))
        with pytest.raises(ValueError):
            settings_from_file(config)

    def test_unsupported_suffix(self, tmp_path):
        """Test that only JSON and TOML files are read."""
        config = tmp_path / "run.yaml"
        config.write_text("n: 10\n")
        with pytest.raises(ValueError):
            settings_from_file(config)

    def test_missing_file(self, tmp_path):
        """Test that a missing config file is an I/O error."""
        with pytest.raises(OSError):
            load_settings(tmp_path / "absent.json", use_env=False)
