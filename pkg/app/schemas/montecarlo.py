from typing import List

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator

from app.schemas.base import ArrayModel
from app.schemas.dgp import DgpConfig
from app.schemas.estimation import PropensityConfig, SmootherConfig

ESTIMANDS = ["alpha", "xi0", "lb", "ub", "delta_lower", "delta_upper"]
DEFAULT_P_POINTS = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]


class McConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    panel: DgpConfig
    n: int = Field(10_000, ge=50)
    reps: int = Field(200, ge=1)
    seed_base: int = 0
    p_points: List[float] = Field(default_factory=lambda: list(DEFAULT_P_POINTS))
    n_edges: int = Field(11, ge=3)
    workers: int = Field(1, ge=1)
    fractional: bool = False
    propensity: PropensityConfig = Field(default_factory=PropensityConfig)
    smoother: SmootherConfig = Field(default_factory=SmootherConfig)

    @field_validator("p_points")
    @classmethod
    def _inside_unit_interval(cls, v):
        if not v:
            raise ValueError("p_points must not be empty")
        if any(not 0.0 < p < 1.0 for p in v):
            raise ValueError("p_points must lie in (0, 1)")
        return sorted(v)


class McFailure(BaseModel):
    rep: int
    seed: int
    error: str


class McReport(ArrayModel):
    """Длинная таблица estimand × p и покрытие истинного MTE границами."""
    n: int
    reps: int
    table: pd.DataFrame
    coverage: pd.DataFrame
    failures: List[McFailure] = []

    def wide(self, metric: str) -> pd.DataFrame:
        """Раскладка как в сводных таблицах: по строкам оценки, по столбцам p."""
        if metric not in ("truth", "bias", "sd", "scaled_mse"):
            raise ValueError(f"unknown metric '{metric}'")
        frame = self.table.pivot(index="estimand", columns="p", values=metric)
        return frame.reindex(ESTIMANDS)

    def to_frame(self) -> pd.DataFrame:
        return self.table.copy()
