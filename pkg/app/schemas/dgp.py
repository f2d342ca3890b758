import re
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.schemas.base import ArrayModel

_Z_COLUMN = re.compile(r"^z\d*$")
_X_COLUMN = re.compile(r"^x\d+$")
LATENT_COLUMNS = ["theta", "eps_s", "xi", "eta", "t", "v", "u_s", "s0", "s1", "y0", "y1"]


class DgpConfig(BaseModel):
    """Структурные параметры синтетической модели отбора.

    Y = Y*·S, S = 1{U_S <= delta0 + delta1·D}, D = 1{V <= Φ(Z)},
    Y_d* = T·beta_d1·θ + (1 − T)·(−beta_d0·θ) + outcome_noise_sd·η.
    """
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    delta0: float
    delta1: float
    beta00: float
    beta01: float
    beta10: float
    beta11: float
    outcome_noise_sd: float = Field(1.0, ge=0.0)
    instrument_dims: int = Field(1, ge=1)
    direct_effect: float = 0.0
    instrument_support: Optional[Tuple[float, ...]] = None

    @model_validator(mode="after")
    def _check_instruments(self):
        if self.direct_effect != 0.0 and self.instrument_dims < 2:
            raise ValueError("direct_effect requires instrument_dims >= 2 (it loads on z2)")
        if self.instrument_support is not None and len(set(self.instrument_support)) < 2:
            raise ValueError("instrument_support needs at least two distinct values")
        return self

    def beta(self, d: int, t: int) -> float:
        return getattr(self, f"beta{d}{t}")


class Sample(ArrayModel):
    """Наблюдаемые записи (y, s, d, z[, x]) и, опционально, латентная истина.

    Латентные величины лежат отдельно от frame, чтобы оценщики не могли их прочитать случайно.
    """
    frame: pd.DataFrame
    latent: Optional[pd.DataFrame] = None

    @model_validator(mode="after")
    def _check_schema(self):
        df = self.frame
        missing = [c for c in ("y", "s", "d") if c not in df.columns]
        if missing:
            raise ValueError(f"sample is missing columns {missing}")
        if not self.z_columns:
            raise ValueError("sample needs at least one instrument column (z or z1..zq)")
        if df[["y", "s", "d", *self.z_columns, *self.x_columns]].isna().any().any():
            raise ValueError("sample contains missing values")
        for col in ("s", "d"):
            if not df[col].isin([0, 1]).all():
                raise ValueError(f"column '{col}' must be binary 0/1")
        if (df.loc[df["s"] == 0, "y"] != 0).any():
            raise ValueError("y must be 0 whenever s = 0 (Y = Y*·S)")
        if self.latent is not None and len(self.latent) != len(df):
            raise ValueError("latent table is not aligned with the sample rows")
        return self

    @property
    def n(self) -> int:
        return len(self.frame)

    @property
    def z_columns(self) -> List[str]:
        return sorted((c for c in self.frame.columns if _Z_COLUMN.match(c)), key=_column_order)

    @property
    def x_columns(self) -> List[str]:
        return sorted((c for c in self.frame.columns if _X_COLUMN.match(c)), key=_column_order)

    @property
    def y(self) -> np.ndarray:
        return self.frame["y"].to_numpy(dtype=float)

    @property
    def s(self) -> np.ndarray:
        return self.frame["s"].to_numpy(dtype=float)

    @property
    def d(self) -> np.ndarray:
        return self.frame["d"].to_numpy(dtype=float)

    @property
    def z(self) -> np.ndarray:
        return self.frame[self.z_columns].to_numpy(dtype=float)

    @property
    def x(self) -> Optional[np.ndarray]:
        if not self.x_columns:
            return None
        return self.frame[self.x_columns].to_numpy(dtype=float)

    def columns(self, names: List[str]) -> np.ndarray:
        unknown = [c for c in names if c not in self.frame.columns]
        if unknown:
            raise KeyError(f"unknown sample columns {unknown}")
        return self.frame[names].to_numpy(dtype=float).reshape(self.n, len(names))

    def take(self, mask: np.ndarray) -> "Sample":
        mask = np.asarray(mask, dtype=bool)
        latent = None if self.latent is None else self.latent.loc[mask].reset_index(drop=True)
        return Sample(frame=self.frame.loc[mask].reset_index(drop=True), latent=latent)

    def to_frame(self, with_latent: bool = False) -> pd.DataFrame:
        if with_latent and self.latent is not None:
            return pd.concat([self.frame, self.latent], axis=1)
        return self.frame.copy()


def _column_order(name: str) -> int:
    digits = name[1:]
    return int(digits) if digits else 0
