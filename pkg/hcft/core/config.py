"""
Application Configuration

Process-level settings come from pydantic-settings (environment variables and
an optional ``.env`` file). Run-level settings live in
``hcft.schemas.config.RunConfig``; this module also parses the line-based
``key = value`` run-config files.
"""

from pathlib import Path
from typing import Dict

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from hcft.utils.exceptions import ConfigurationException


class Settings(BaseSettings):
    """Application settings with environment variable support."""

    # Application
    PROJECT_NAME: str = "hcft"
    DESCRIPTION: str = "Heuristic clustering-driven feature fine-tuning for MIL"
    VERSION: str = "1.0.0"
    API_V1_STR: str = "/api/v1"

    # Environment
    ENVIRONMENT: str = Field(default="development")
    DEBUG: bool = Field(default=False)

    # Logging
    LOG_LEVEL: str = Field(default="INFO")
    LOG_FORMAT: str = Field(default="json")

    # Runs
    RUNS_DIR: Path = Field(default=Path("runs"))

    # Report API
    API_HOST: str = Field(default="127.0.0.1")
    API_PORT: int = Field(default=8000)

    @field_validator("ENVIRONMENT")
    @classmethod
    def validate_environment(cls, v: str) -> str:
        """Validate environment value."""
        allowed = ["development", "testing", "production"]
        if v not in allowed:
            raise ValueError(f"Environment must be one of {allowed}")
        return v

    @field_validator("LOG_LEVEL")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        """Validate log level."""
        allowed = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
        if v.upper() not in allowed:
            raise ValueError(f"Log level must be one of {allowed}")
        return v.upper()

    @field_validator("LOG_FORMAT")
    @classmethod
    def validate_log_format(cls, v: str) -> str:
        """Validate log renderer."""
        allowed = ["json", "console"]
        if v.lower() not in allowed:
            raise ValueError(f"Log format must be one of {allowed}")
        return v.lower()

    @property
    def is_development(self) -> bool:
        """Check if running in development environment."""
        return self.ENVIRONMENT == "development"

    @property
    def is_testing(self) -> bool:
        """Check if running in testing environment."""
        return self.ENVIRONMENT == "testing"

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    """
    Parse line-based ``key = value`` configuration text.

    Blank lines and lines starting with ``#`` are ignored. Keys may be written
    with dashes or underscores.

    Args:
        text: File contents
        source: Name used in error messages

    Returns:
        Dict[str, str]: Raw string values keyed by field name

    Raises:
        ConfigurationException: On a malformed or duplicated line
    """
    values: Dict[str, str] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationException(f"{source}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        if not key:
            raise ConfigurationException(f"{source}:{lineno}: empty key")
        if key in values:
            raise ConfigurationException(f"{source}:{lineno}: duplicate key '{key}'")
        values[key] = value.strip()
    return values


def load_config_file(path: Path) -> Dict[str, str]:
    """
    Read a run-config file.

    Args:
        path: Path to a UTF-8 ``key = value`` file

    Returns:
        Dict[str, str]: Raw string values keyed by field name
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationException(f"cannot read config file {path}: {e}") from e
    return parse_config_text(text, source=str(path))


# Create settings instance
settings = Settings()
