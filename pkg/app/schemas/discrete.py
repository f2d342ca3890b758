import math
from typing import List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, model_validator

from app.schemas.base import ArrayModel
from app.schemas.bounds import BoundStatus
from app.schemas.estimation import OutcomeGrid


class LadderLevel(ArrayModel):
    z_values: List[float]
    p: float
    n: Optional[int] = None
    e_sd: float
    e_s0: float
    # P(Y в бине k, S=1, D=d | уровень)
    bins1: np.ndarray
    bins0: np.ndarray


class DiscreteLadder(ArrayModel):
    levels: List[LadderLevel]
    grid: OutcomeGrid

    @model_validator(mode="after")
    def _strictly_increasing(self):
        ps = [lvl.p for lvl in self.levels]
        if len(ps) < 2:
            raise ValueError("a ladder needs at least two propensity levels")
        if any(b <= a for a, b in zip(ps, ps[1:])):
            raise ValueError("ladder levels must have strictly increasing propensities")
        if ps[0] <= 0.0 or ps[-1] >= 1.0:
            raise ValueError("ladder propensities must lie strictly inside (0, 1)")
        return self

    @property
    def p(self) -> np.ndarray:
        return np.array([lvl.p for lvl in self.levels])

    @property
    def n_intervals(self) -> int:
        return len(self.levels) - 1


class LateBound(BaseModel):
    model_config = ConfigDict(frozen=True)

    ell: int
    p_lo: float
    p_hi: float
    alpha_tilde: float = math.nan
    lower: float = math.nan
    upper: float = math.nan
    xi0: float = math.nan
    status: BoundStatus
    note: Optional[str] = None


def late_frame(bounds: List[LateBound]) -> pd.DataFrame:
    return pd.DataFrame([{
        "ell": b.ell, "p_lo": b.p_lo, "p_hi": b.p_hi, "alpha_tilde": b.alpha_tilde,
        "lower": b.lower, "upper": b.upper, "status": b.status.value,
    } for b in bounds])
