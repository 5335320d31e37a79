"""Application configuration using pydantic-settings."""

from functools import lru_cache
from pathlib import Path

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="GASINFER_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
    )

    # Application
    app_name: str = "gasinfer"
    debug: bool = False
    log_level: str = "INFO"

    # Execution
    parallel_workers: int = Field(default=1, ge=1)  # threads; 1 = sequential

    # Hub strategies
    hub_lambda: float = Field(default=0.1, gt=0.0)

    # External-memory shuffle
    memory_budget_bytes: int = Field(default=64 * 1024 * 1024, ge=0)  # 0 = unlimited
    spill_dir: Path | None = None

    # Comparison
    compare_atol: float = Field(default=1e-4, ge=0.0)

    # Generator / model defaults
    feature_dim: int = Field(default=16, ge=1)
    hidden_dim: int = Field(default=16, ge=1)
    num_classes: int = Field(default=2, ge=1)


@lru_cache
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()
