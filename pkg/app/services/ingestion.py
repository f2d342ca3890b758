from pathlib import Path
from typing import Union

import pandas as pd
from loguru import logger
from pydantic import ValidationError

from app.core.errors import ConfigError
from app.schemas.dgp import LATENT_COLUMNS, Sample


class IngestionService:
    """Чтение и запись выборок в CSV со схемой y,s,d,z[,x1..xq]."""

    def load(self, path: Union[str, Path]) -> Sample:
        frame = self._read_frame(Path(path))
        latent_cols = [c for c in LATENT_COLUMNS if c in frame.columns]
        latent = frame[latent_cols].reset_index(drop=True) if len(latent_cols) == len(LATENT_COLUMNS) else None
        observed = frame.drop(columns=latent_cols)
        try:
            sample = Sample(frame=observed.reset_index(drop=True), latent=latent)
        except ValidationError as e:
            logger.error(f"Sample schema check failed for {path}: {e}")
            raise ConfigError(f"Invalid sample file {path}: {e.errors()[0]['msg']}") from e
        logger.info(f"Loaded sample {path}: n={sample.n}, instruments={sample.z_columns}, covariates={sample.x_columns}")
        return sample

    def save(self, sample: Sample, path: Union[str, Path], with_latent: bool = False) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        sample.to_frame(with_latent=with_latent).to_csv(path, index=False)
        logger.success(f"Sample written to {path} ({sample.n} rows)")
        return path

    def _read_frame(self, path: Path) -> pd.DataFrame:
        if path.suffix.lower() != ".csv":
            raise ConfigError(f"Unsupported format '{path.suffix}', only .csv samples are read")
        try:
            return pd.read_csv(path)
        except (OSError, pd.errors.ParserError) as e:
            logger.error(f"Error reading sample file: {e}")
            raise ConfigError(f"Cannot read sample file {path}: {e}") from e
