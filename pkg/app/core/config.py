from pathlib import Path
from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict

from app.core.errors import ConfigError


class Settings(BaseSettings):
    # App
    APP_NAME: str = "MTE Bounds"
    VERSION: str = "0.3.0"

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FILE: str = "mte_bounds.log"
    LOG_ROTATION: str = "10 MB"

    # Artifacts
    OUTPUT_DIR: str = "out"
    SEED: int = 20240101

    # Propensity (Step 1)
    LAMBDA_TRIM: float = 0.001
    SUPPORT_TRIM_PCT: float = 0.01
    MAX_NEWTON_ITER: int = 100
    SEPARATION_INDEX: float = 35.0  # max|Xβ|, выше которого логит считается разделимым

    # Smoother (Steps 2-3)
    KERNEL: str = "epanechnikov"
    BANDWIDTH_RULE: str = "fan-gijbels"  # или silverman, или число
    BANDWIDTH_SCALE: float = 1.0
    GRID_EDGES: int = 11
    PARAM_GRID_EDGES: int = 20

    # Oracle
    QUAD_TOL: float = 1e-9

    # Diagnostics
    DIAG_TOLERANCE: float = 0.05
    DIAG_PERMUTATIONS: int = 200

    # Monte Carlo
    MC_REPS: int = 200
    MC_N: int = 10_000
    MC_WORKERS: int = 1

    model_config = SettingsConfigDict(env_prefix="MTE_", env_file=".env", extra="ignore")


def load_settings(config_file: Optional[str] = None) -> Settings:
    """Settings из плоского KEY=VALUE файла (--config); env и .env остаются ниже по приоритету."""
    if config_file is None:
        return Settings()
    path = Path(config_file)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {config_file}")
    return Settings(_env_file=(".env", str(path)))


settings = Settings()


def configure(config_file: Optional[str] = None) -> Settings:
    """Перечитывает настройки с учётом --config и обновляет синглтон на месте."""
    loaded = load_settings(config_file)
    for name in Settings.model_fields:
        setattr(settings, name, getattr(loaded, name))
    return settings
