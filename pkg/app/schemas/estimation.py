from enum import Enum
from typing import Dict, List, Literal, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.schemas.base import ArrayModel


class PropensityConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    lambda_trim: float = Field(0.001, ge=0.0, lt=0.5)
    support_trim_pct: float = Field(0.01, ge=0.0, lt=0.5)
    # None -> все инструменты; [] -> модель только с константой
    columns: Optional[List[str]] = None
    max_iter: int = Field(100, ge=1)
    separation_index: float = Field(35.0, gt=0.0)


class PropensityFit(ArrayModel):
    names: List[str]
    coefficients: np.ndarray
    std_errors: np.ndarray
    fitted: np.ndarray
    kept: np.ndarray
    log_likelihood: float
    iterations: int
    config: PropensityConfig

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"row": np.arange(len(self.fitted)), "phat": self.fitted, "kept": self.kept.astype(int)})


class SmootherConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    kernel: Literal["epanechnikov", "triangular", "uniform", "gaussian"] = "epanechnikov"
    bandwidth: Union[float, Literal["fan-gijbels", "silverman"]] = "fan-gijbels"
    bandwidth_scale: float = Field(1.0, gt=0.0)
    degree: int = Field(2, ge=1, le=2)
    derivative_selector: int = Field(1, ge=1)

    @field_validator("bandwidth")
    @classmethod
    def _positive_bandwidth(cls, value):
        if isinstance(value, float) and not value > 0:
            raise ValueError("explicit bandwidth must be positive")
        return value

    @model_validator(mode="after")
    def _selector_within_degree(self):
        if self.derivative_selector > self.degree:
            raise ValueError("derivative_selector cannot exceed the polynomial degree")
        return self


class OutcomeGrid(ArrayModel):
    """Сетка по исходу: бины [y_{k-1}, y_k), последний бин закрыт справа."""
    edges: np.ndarray

    @field_validator("edges", mode="before")
    @classmethod
    def _strictly_increasing(cls, value):
        value = np.asarray(value, dtype=float)
        if value.ndim != 1 or len(value) < 2:
            raise ValueError("grid needs at least two edges")
        if not np.all(np.isfinite(value)) or np.any(np.diff(value) <= 0):
            raise ValueError("grid edges must be finite and strictly increasing")
        return value

    @classmethod
    def from_quantiles(cls, y: np.ndarray, n_edges: int) -> "OutcomeGrid":
        """Выборочные перцентили 0, 1/(K-1), ..., 1 наблюдаемого исхода."""
        edges = np.unique(np.quantile(np.asarray(y, dtype=float), np.linspace(0.0, 1.0, n_edges)))
        return cls(edges=edges)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def n_bins(self) -> int:
        return len(self.edges) - 1

    def bin_index(self, y: np.ndarray) -> np.ndarray:
        """Номер бина для каждого y; значения вне сетки прижимаются к крайним бинам."""
        idx = np.searchsorted(self.edges, np.asarray(y, dtype=float), side="right") - 1
        return np.clip(idx, 0, self.n_bins - 1)

    def indicators(self, y: np.ndarray) -> np.ndarray:
        """Матрица n x K индикаторов принадлежности бину."""
        idx = self.bin_index(y)
        out = np.zeros((len(idx), self.n_bins))
        out[np.arange(len(idx)), idx] = 1.0
        return out


class TableStatus(str, Enum):
    ok = "ok"
    boundary = "boundary"
    nonestimable = "nonestimable"


class ConditionalOutcomeTable(ArrayModel):
    p: float
    pi0: float
    pi1: float
    gamma0: np.ndarray
    gamma1: np.ndarray
    f0: np.ndarray
    f1: np.ndarray
    F0: np.ndarray
    F1: np.ndarray
    alpha_hat: float
    grid: OutcomeGrid
    status: TableStatus = TableStatus.ok
    bandwidth: Optional[float] = None

    @property
    def estimable(self) -> bool:
        return self.status != TableStatus.nonestimable

    def f(self, arm: int) -> np.ndarray:
        return self.f1 if arm == 1 else self.f0

    def F(self, arm: int) -> np.ndarray:
        return self.F1 if arm == 1 else self.F0

    def to_frame(self) -> pd.DataFrame:
        k = np.arange(1, self.grid.n_bins + 1)
        return pd.DataFrame({
            "p": self.p, "k": k, "ylo": self.grid.edges[:-1], "yhi": self.grid.edges[1:],
            "gamma0": self.gamma0, "gamma1": self.gamma1, "f0": self.f0, "f1": self.f1,
            "F0": self.F0, "F1": self.F1, "pi0": self.pi0, "pi1": self.pi1,
            "alpha_hat": self.alpha_hat, "status": self.status.value,
        })


class LogitResult(ArrayModel):
    component: str
    names: List[str]
    coefficients: np.ndarray
    std_errors: np.ndarray
    log_likelihood: float
    trace: List[float]
    iterations: int


class ParametricFit(ArrayModel):
    """Логит-индексы Λ(c0 + c1·p + c2·p² + x·c_X) для P[S=1,D=d|x,p] и для каждого бина исхода."""
    propensity: PropensityFit
    covariate_columns: List[str]
    grid: OutcomeGrid
    selection: Dict[int, LogitResult]
    bins: Dict[int, List[LogitResult]]

    @model_validator(mode="after")
    def _shared_grid(self):
        for d, fits in self.bins.items():
            if len(fits) != self.grid.n_bins:
                raise ValueError(f"arm {d}: {len(fits)} bin models for {self.grid.n_bins} grid bins")
            for res in [self.selection[d], *fits]:
                if not np.all(np.isfinite(res.coefficients)):
                    raise ValueError(f"non-finite coefficients in {res.component}")
        return self
