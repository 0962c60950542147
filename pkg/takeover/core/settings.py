# takeover/core/settings.py
from functools import lru_cache
from pathlib import Path
from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


def package_root() -> Path:
    return Path(__file__).resolve().parents[1]


def repo_root() -> Path:
    return Path(__file__).resolve().parents[2]


class Settings(BaseSettings):
    # --- Core ---
    APP_NAME: str = "takeover-lab"
    ARTIFACT_VERSION: str = "0.1.0"
    ENV: str = "development"

    # --- Logging ---
    LOG_LEVEL: str = "INFO"
    LOG_DIR: str = "logs"
    LOG_ROTATION: str = "1 day"
    LOG_RETENTION: str = "30 days"
    LOG_TO_FILE: bool = True

    # --- Execution ---
    DEFAULT_THREADS: int = 1
    TORCH_NUM_THREADS: Optional[int] = None  # unset: follow --threads

    # --- Packaged data ---
    DATA_DIR: Optional[str] = None
    ENGINE_CONFIG_DIR: Optional[str] = None
    TEMPLATE_DIR: Optional[str] = None

    model_config = SettingsConfigDict(
        env_prefix="TAKEOVER_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # Helpers
    @property
    def data_dir(self) -> Path:
        return Path(self.DATA_DIR) if self.DATA_DIR else package_root() / "data"

    @property
    def engine_config_dir(self) -> Path:
        if self.ENGINE_CONFIG_DIR:
            return Path(self.ENGINE_CONFIG_DIR)
        return repo_root() / "engine_config"

    @property
    def template_dir(self) -> Path:
        return Path(self.TEMPLATE_DIR) if self.TEMPLATE_DIR else repo_root() / "templates"


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """
    Cached settings plus environment-based overrides.
    """
    s = Settings()

    env = s.ENV.lower()
    if env == "production":
        s.LOG_LEVEL = "WARNING"
    elif env == "test":
        s.LOG_TO_FILE = False

    return s
