import math
from typing import List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, model_validator


class CheckResult(BaseModel):
    """Одна проверка: точки сетки, запас (slack) в каждой и допуск. Нарушение: min slack < −допуск."""
    model_config = ConfigDict(frozen=True)

    name: str
    points: List[float] = []
    slacks: List[float] = []
    tolerance: float = 0.0
    std_errors: Optional[List[float]] = None
    excluded: int = 0
    note: Optional[str] = None

    @model_validator(mode="after")
    def _aligned(self):
        if len(self.points) != len(self.slacks):
            raise ValueError(f"check '{self.name}': points and slacks differ in length")
        if self.std_errors is not None and len(self.std_errors) != len(self.slacks):
            raise ValueError(f"check '{self.name}': std_errors and slacks differ in length")
        if self.tolerance < 0:
            raise ValueError("tolerance must be non-negative")
        return self

    @property
    def min_slack(self) -> float:
        finite = [s for s in self.slacks if math.isfinite(s)]
        return min(finite) if finite else math.nan

    @property
    def skipped(self) -> bool:
        return math.isnan(self.min_slack)

    @property
    def violated(self) -> bool:
        return not self.skipped and self.min_slack < -self.tolerance


class DiagnosticReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    checks: List[CheckResult]

    @property
    def violated(self) -> bool:
        return any(c.violated for c in self.checks)

    def check(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def merge(self, other: "DiagnosticReport") -> "DiagnosticReport":
        return DiagnosticReport(checks=self.checks + other.checks)

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for c in self.checks:
            for point, slack in zip(c.points, c.slacks):
                rows.append({"check": c.name, "point": point, "slack": slack,
                             "violated": bool(np.isfinite(slack) and slack < -c.tolerance)})
        return pd.DataFrame(rows, columns=["check", "point", "slack", "violated"])

    def summary(self) -> pd.DataFrame:
        """Таблица для человека: одна строка на проверку."""
        return pd.DataFrame([{
            "check": c.name, "points": len(c.points), "min_slack": c.min_slack, "tolerance": c.tolerance,
            "violated": c.violated, "excluded": c.excluded, "note": c.note or "",
        } for c in self.checks])
