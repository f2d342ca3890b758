import math
from enum import Enum
from typing import List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, model_validator


class AssumptionTier(str, Enum):
    no_restriction = "no-restriction"
    monotone = "monotone"
    monotone_dominance = "monotone-dominance"
    no_selection_effect = "no-selection-effect"


class BoundStatus(str, Enum):
    identified = "identified"
    partial = "partial"
    lost = "lost"
    nonestimable = "nonestimable"


class BoundPoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    p: float
    tier: AssumptionTier
    lower: float
    upper: float
    alpha: float = math.nan
    beta: float = math.nan
    v_lower: float = math.nan  # vℓ = max{m0 + m1 − 1, 0} во всех наборах предпосылок
    xi0: float = math.nan
    status: BoundStatus
    nonestimable_share: Optional[float] = None

    @model_validator(mode="after")
    def _ordered(self):
        if math.isfinite(self.lower) and math.isfinite(self.upper) and self.lower > self.upper + 1e-12:
            raise ValueError(f"lower bound {self.lower} exceeds upper bound {self.upper} at p={self.p}")
        return self

    @property
    def finite(self) -> bool:
        return math.isfinite(self.lower) and math.isfinite(self.upper)


class BoundCurve(BaseModel):
    model_config = ConfigDict(frozen=True)

    tier: AssumptionTier
    points: List[BoundPoint]

    @property
    def p(self) -> np.ndarray:
        return np.array([pt.p for pt in self.points])

    @property
    def lower(self) -> np.ndarray:
        return np.array([pt.lower for pt in self.points])

    @property
    def upper(self) -> np.ndarray:
        return np.array([pt.upper for pt in self.points])

    def to_frame(self) -> pd.DataFrame:
        rows = [{
            "p": pt.p, "tier": pt.tier.value, "lower": pt.lower, "upper": pt.upper, "alpha": pt.alpha,
            "beta": pt.beta, "v_lower": pt.v_lower, "xi0": pt.xi0, "status": pt.status.value,
            **({"nonestimable_share": pt.nonestimable_share} if pt.nonestimable_share is not None else {}),
        } for pt in self.points]
        return pd.DataFrame(rows)


class PointEstimate(BaseModel):
    """Точечно идентифицированная величина на одном p (экстенсивная граница, LIV и т.п.)."""
    model_config = ConfigDict(frozen=True)

    name: str
    p: float
    value: float
    status: BoundStatus = BoundStatus.identified


class FrechetInterval(BaseModel):
    model_config = ConfigDict(frozen=True)

    lower: float
    upper: float
    p: Optional[float] = None


class OracleCurvePoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    p: float
    alpha: float
    alpha_frechet: float
    beta_frechet: float
    v_lower: float
    mte: float
    lb1: float
    ub1: float
    lb2: float
    ub2: float
    lb3: float
    ub3: float
    xi0: float
    liv: float
    status: BoundStatus


class ClosedFormCheck(BaseModel):
    """Монте-Карло оценки закрытых формул с их стандартными ошибками."""
    model_config = ConfigDict(frozen=True)

    p: float
    draws: int
    m0: float
    m0_se: float
    m1: float
    m1_se: float
    alpha: float
    alpha_se: float
    xi0: float
    xi0_se: float
