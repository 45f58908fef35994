# confsel/core/settings.py
# The module is for managing application settings using Pydantic.
# Values come from field defaults, then CONFSEL_* environment variables or a .env file,
# then an optional flat key=value config file, then command-line flags.

from pathlib import Path
from typing import Any, Dict, Literal, Optional

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from confsel.core.errors import ConfigError


class Settings(BaseSettings):
    """
    A class to hold all application settings, loaded from the environment or an .env file.
    """
    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="CONFSEL_",
        extra="ignore",
    )

    # General Settings
    PROJECT_NAME: str = "confsel"
    DEBUG: bool = False

    # Discretization and CI testing
    ALPHA: float = Field(0.05, gt=0.0, lt=1.0)
    BINS: int = Field(3, ge=2)
    SAMPLE_SIZE_GUARD: bool = True

    # Structure learning
    MAX_COND_SIZE: Optional[int] = Field(3, ge=0)
    VARIABLE_ORDER: Literal["index", "max_min"] = "max_min"
    SCORE: Literal["aic", "bic", "loglik"] = "aic"
    HC_MAX_ITER: int = Field(10_000, ge=1)

    # Estimation
    TRUNCATION_LOW: float = Field(0.025, gt=0.0, lt=0.5)
    TRUNCATION_HIGH: float = Field(0.975, gt=0.5, lt=1.0)
    CALIPER: Optional[float] = Field(None, gt=0.0)
    MATCH_TIES: Literal["average", "lowest_index"] = "average"

    # Simulation harness
    REPLICATIONS: int = Field(200, ge=1)
    SEED: int = Field(20190101, ge=0)
    WORKERS: Optional[int] = Field(None, ge=1)
    TRUE_ACE_MC_N: int = Field(10_000_000, ge=100_000)

    # File Storage Path
    OUTPUT_DIR: Path = Path("results")

    @field_validator("MAX_COND_SIZE", "CALIPER", "WORKERS", mode="before")
    @classmethod
    def _empty_is_none(cls, value: Any) -> Any:
        """Config files and env vars spell 'unset' as an empty string or 'none'."""
        if isinstance(value, str) and value.strip().lower() in {"", "none", "null"}:
            return None
        return value


def read_config_file(path: Path) -> Dict[str, str]:
    """
    Parses a flat key=value config file. Blank lines and '#' comments are skipped;
    keys are normalised to the upper-case field names used by Settings.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file '{path}': {e}") from e
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip().upper().replace("-", "_")] = value.strip()
    return values


def resolve_settings(config_file: Optional[Path] = None, **overrides: Any) -> Settings:
    """
    Builds a Settings instance with the precedence defaults < env < config file < overrides.
    Overrides whose value is None are treated as 'not given on the command line'.
    """
    merged: Dict[str, Any] = {}
    if config_file is not None:
        merged.update(read_config_file(config_file))
    merged.update({key.upper(): value for key, value in overrides.items() if value is not None})
    return Settings(**merged)


settings = Settings()
