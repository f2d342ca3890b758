import math
from enum import Enum
from typing import Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy.integrate import trapezoid

from app.schemas.base import ArrayModel
from app.schemas.bounds import BoundStatus


class WeightKind(str, Enum):
    ate = "ATE"
    att = "ATT"
    atu = "ATU"
    late = "LATE"
    prte = "PRTE"


class PolicyPair(ArrayModel):
    """Табулированные CDF пропенсити при политиках a и a'."""
    p: np.ndarray
    cdf_a: np.ndarray
    cdf_a_prime: np.ndarray

    @field_validator("p", "cdf_a", "cdf_a_prime", mode="before")
    @classmethod
    def _as_array(cls, value):
        return np.asarray(value, dtype=float)

    @model_validator(mode="after")
    def _monotone_cdfs(self):
        if not (len(self.p) == len(self.cdf_a) == len(self.cdf_a_prime)):
            raise ValueError("policy curves must share one p grid")
        if np.any(np.diff(self.p) <= 0):
            raise ValueError("policy p grid must be strictly increasing")
        for name, cdf in (("cdf_a", self.cdf_a), ("cdf_a_prime", self.cdf_a_prime)):
            if np.any(np.diff(cdf) < 0) or cdf.min() < 0 or cdf.max() > 1:
                raise ValueError(f"{name} must be a nondecreasing curve inside [0, 1]")
        return self

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "PolicyPair":
        return cls(p=frame["p"], cdf_a=frame["cdf_a"], cdf_a_prime=frame["cdf_a_prime"])

    def shift(self, p: np.ndarray) -> np.ndarray:
        """F_{P_a'}(p) − F_{P_a}(p) на произвольной сетке."""
        return (np.interp(p, self.p, self.cdf_a_prime, left=0.0, right=1.0)
                - np.interp(p, self.p, self.cdf_a, left=0.0, right=1.0))


class WeightSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: WeightKind
    p_lo: Optional[float] = None
    p_hi: Optional[float] = None
    policy: Optional[PolicyPair] = None

    @model_validator(mode="after")
    def _kind_parameters(self):
        if self.kind == WeightKind.late:
            if self.p_lo is None or self.p_hi is None or not 0.0 <= self.p_lo < self.p_hi <= 1.0:
                raise ValueError("LATE weight needs 0 <= p_lo < p_hi <= 1")
        if self.kind == WeightKind.prte and self.policy is None:
            raise ValueError("PRTE weight needs a policy pair")
        return self

    @property
    def label(self) -> str:
        if self.kind == WeightKind.late:
            return f"LATE[{self.p_lo:g},{self.p_hi:g}]"
        return self.kind.value


class WeightCurve(ArrayModel):
    label: str
    p: np.ndarray
    omega: np.ndarray
    domain: np.ndarray
    normalizer: float

    def __call__(self, p):
        return np.interp(p, self.p[self.domain], self.omega[self.domain], left=0.0, right=0.0)

    @property
    def integral(self) -> float:
        return float(trapezoid(self.omega[self.domain], self.p[self.domain]))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"kind": self.label, "p": self.p, "omega": self.omega})


class AggregateBound(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: str
    lower: float
    upper: float
    weight_integral: float
    lost_mass: float = 0.0
    status: BoundStatus = BoundStatus.partial

    @model_validator(mode="after")
    def _ordered(self):
        if math.isfinite(self.lower) and math.isfinite(self.upper) and self.lower > self.upper + 1e-12:
            raise ValueError("aggregate lower bound exceeds upper bound")
        return self
