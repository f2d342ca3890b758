import math
from typing import List, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from app.schemas.bounds import BoundStatus


class OutcomeSet(BaseModel):
    """Объединение непересекающихся диапазонов бинов сетки; номера бинов с единицы, концы включены."""
    model_config = ConfigDict(frozen=True)

    ranges: List[Tuple[int, int]]

    @field_validator("ranges")
    @classmethod
    def _disjoint(cls, ranges):
        if not ranges:
            raise ValueError("outcome set needs at least one bin range")
        ordered = sorted(ranges)
        for lo, hi in ordered:
            if lo < 1 or hi < lo:
                raise ValueError(f"bad bin range {lo}-{hi}")
        for (_, a_hi), (b_lo, _) in zip(ordered, ordered[1:]):
            if b_lo <= a_hi:
                raise ValueError("bin ranges of an outcome set must not overlap")
        return ordered

    @classmethod
    def parse(cls, text: str) -> "OutcomeSet":
        """'1-3,7-9' или '4' -> OutcomeSet."""
        ranges = []
        for chunk in text.split(","):
            chunk = chunk.strip()
            if not chunk:
                continue
            lo, _, hi = chunk.partition("-")
            try:
                lo_i = int(lo)
                hi_i = int(hi) if hi else lo_i
            except ValueError as e:
                raise ValueError(f"cannot parse bin range '{chunk}'") from e
            ranges.append((lo_i, hi_i))
        return cls(ranges=ranges)

    @property
    def label(self) -> str:
        return ",".join(f"{lo}-{hi}" if hi > lo else f"{lo}" for lo, hi in self.ranges)

    def mask(self, n_bins: int) -> np.ndarray:
        if self.ranges[-1][1] > n_bins:
            raise ValueError(f"outcome set {self.label} exceeds the grid of {n_bins} bins")
        out = np.zeros(n_bins, dtype=bool)
        for lo, hi in self.ranges:
            out[lo - 1:hi] = True
        return out

    def complement(self, n_bins: int) -> "OutcomeSet":
        rest = np.flatnonzero(~self.mask(n_bins)) + 1
        if rest.size == 0:
            raise ValueError("complement of the full support is empty")
        breaks = np.flatnonzero(np.diff(rest) > 1)
        starts = np.r_[rest[0], rest[breaks + 1]]
        ends = np.r_[rest[breaks], rest[-1]]
        return OutcomeSet(ranges=[(int(a), int(b)) for a, b in zip(starts, ends)])


class DmteBound(BaseModel):
    model_config = ConfigDict(frozen=True)

    p: float
    set_label: str
    p_a1: float = math.nan
    p_a0: float = math.nan
    alpha: float = math.nan
    lower: float = math.nan
    upper: float = math.nan
    status: BoundStatus

    @model_validator(mode="after")
    def _inside_unit_band(self):
        if math.isfinite(self.lower) and math.isfinite(self.upper):
            if not -1.0 - 1e-12 <= self.lower <= self.upper + 1e-12 <= 1.0 + 2e-12:
                raise ValueError(f"DMTE bounds [{self.lower}, {self.upper}] must be ordered inside [-1, 1]")
        return self


def dmte_frame(bounds: List[DmteBound]) -> pd.DataFrame:
    return pd.DataFrame([{
        "p": b.p, "set": b.set_label, "pA1": b.p_a1, "pA0": b.p_a0,
        "lower": b.lower, "upper": b.upper, "status": b.status.value,
    } for b in bounds])
