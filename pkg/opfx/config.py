"""
Runtime settings for opfx runs
"""
import sys
from functools import lru_cache
from pathlib import Path

from dotenv import load_dotenv
from loguru import logger
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

# Load environment variables
load_dotenv()


class Settings(BaseSettings):
    """Tolerances, limits and paths shared by every command"""

    model_config = SettingsConfigDict(env_prefix="OPFX_", env_file=".env", extra="ignore")

    cache_dir: Path = Field(Path(".opfx_cache"), description="Manifest cache directory")
    feasibility_tol: float = Field(1e-6, gt=0)
    stationarity_tol: float = Field(1e-6, gt=0)
    max_iter: int = Field(500, ge=1)
    partition_cap: int = Field(10**6, ge=1)
    guard_eps: float = Field(1e-12, gt=0)
    exp_clamp: float = Field(50.0, gt=0)
    perturbation_scale: float = Field(1e-2, ge=0)
    duplicate_tol: float = Field(1e-6, ge=0)
    n_jobs: int = Field(1, ge=1)
    log_level: str = "INFO"


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Return the process-wide settings instance"""
    return Settings()


def configure_logging(level: str = "INFO") -> None:
    """Replace loguru's default sink with a stderr sink at ``level``"""
    logger.remove()
    logger.add(
        sys.stderr,
        level=level.upper(),
        format="<green>{time:HH:mm:ss}</green> | <level>{level: <8}</level> | {name}:{line} - {message}",
    )
