# tests/test_settings.py

import os
from pathlib import Path

import pytest
from pydantic import ValidationError

from confsel.core.errors import ConfigError
from confsel.core.settings import Settings, read_config_file, resolve_settings
from confsel.schemas.config import MmpcConfig, PsmConfig, SelectionConfig


@pytest.fixture(autouse=True)
def clean_env(monkeypatch, tmp_path):
    # no stray CONFSEL_* variables or .env file from the developer's shell
    for key in list(os.environ):
        if key.startswith("CONFSEL_"):
            monkeypatch.delenv(key)
    monkeypatch.chdir(tmp_path)


class TestSettings:
    def test_defaults(self):
        cfg = Settings()
        assert cfg.ALPHA == 0.05 and cfg.BINS == 3 and cfg.MAX_COND_SIZE == 3
        assert cfg.REPLICATIONS == 200 and cfg.SEED == 20190101
        assert cfg.VARIABLE_ORDER == "max_min"
        assert cfg.OUTPUT_DIR == Path("results")

    def test_environment(self, monkeypatch):
        monkeypatch.setenv("CONFSEL_ALPHA", "0.01")
        assert Settings().ALPHA == 0.01

    def test_dotenv_file(self, tmp_path):
        (tmp_path / ".env").write_text("CONFSEL_BINS=5\n")
        assert Settings().BINS == 5

    def test_precedence(self, monkeypatch, tmp_path):
        monkeypatch.setenv("CONFSEL_ALPHA", "0.01")
        monkeypatch.setenv("CONFSEL_BINS", "4")
        config = tmp_path / "run.cfg"
        config.write_text("alpha=0.02\nseed=9\n")
        cfg = resolve_settings(config, SEED=11, BINS=None)
        assert cfg.ALPHA == 0.02
        assert cfg.BINS == 4
        assert cfg.SEED == 11

    def test_empty_value_means_unset(self, tmp_path):
        config = tmp_path / "run.cfg"
        config.write_text("max-cond-size=\ncaliper=none\n")
        cfg = resolve_settings(config)
        assert cfg.MAX_COND_SIZE is None and cfg.CALIPER is None

    def test_malformed_config_line(self, tmp_path):
        config = tmp_path / "run.cfg"
        config.write_text("alpha 0.01\n")
        with pytest.raises(ConfigError, match="key=value") as info:
            read_config_file(config)
        assert info.value.exit_code == 2

    def test_out_of_range_value(self):
        with pytest.raises(ValidationError):
            resolve_settings(ALPHA=1.5)


class TestDerivedConfigs:
    def test_selection_config_follows_settings(self):
        cfg = resolve_settings(ALPHA=0.01, BINS=4, VARIABLE_ORDER="max_min", SAMPLE_SIZE_GUARD=False)
        selection = SelectionConfig.from_settings("mmhc", cfg)
        assert selection.method == "mmhc" and selection.bins == 4
        assert selection.mmpc == MmpcConfig(alpha=0.01, variable_order="max_min", sample_size_guard=False)

    def test_psm_config_follows_settings(self):
        assert PsmConfig.from_settings(resolve_settings(CALIPER=0.2)).caliper == 0.2
