"""Распределительный MTE^OO: границы для P[Y1*∈A] − P[Y0*∈A] у always-observed."""
import math
from typing import Iterable, List, Tuple

import numpy as np
from loguru import logger

from app.schemas.bounds import BoundStatus
from app.schemas.dmte import DmteBound, OutcomeSet
from app.schemas.estimation import ConditionalOutcomeTable, OutcomeGrid


def cover_interval(grid: OutcomeGrid, lo: float, hi: float) -> OutcomeSet:
    """Интервал [lo, hi) заменяется минимальным покрытием из бинов сетки."""
    if not hi > lo:
        raise ValueError("interval must have hi > lo")
    first = int(grid.bin_index(np.array([lo]))[0]) + 1
    last = int(grid.bin_index(np.array([np.nextafter(hi, -np.inf)]))[0]) + 1
    if not (np.isclose(grid.edges, lo).any() and np.isclose(grid.edges, hi).any()):
        logger.warning(f"Interval [{lo}, {hi}) does not align with grid edges; using bins {first}-{last}")
    return OutcomeSet(ranges=[(first, last)])


def dmte_interval(p_a1: float, p_a0: float, alpha: float) -> Tuple[float, float]:
    """max{0, (pA1 − (1−α))/α} − pA0 и min{1, pA1/α} − pA0; при α = 0 интервал тривиален."""
    if alpha <= 0.0:
        return -p_a0, 1.0 - p_a0
    lower = max(0.0, (p_a1 - (1.0 - alpha)) / alpha) - p_a0
    upper = min(1.0, p_a1 / alpha) - p_a0
    return lower, upper


def dmte_bounds(table: ConditionalOutcomeTable, outcome_set: OutcomeSet) -> DmteBound:
    label = outcome_set.label
    if not table.estimable:
        return DmteBound(p=table.p, set_label=label, status=BoundStatus.nonestimable)

    mask = outcome_set.mask(table.grid.n_bins)
    # f̂ нормированы, суммы по бинам прижимаем к [0, 1] от округления
    p_a1 = float(np.clip(table.f1[mask].sum(), 0.0, 1.0))
    p_a0 = float(np.clip(table.f0[mask].sum(), 0.0, 1.0))
    alpha = table.alpha_hat
    lower, upper = dmte_interval(p_a1, p_a0, alpha)
    if alpha <= 0.0:
        status = BoundStatus.lost
    elif math.isclose(lower, upper, abs_tol=1e-12):
        status = BoundStatus.identified
    else:
        status = BoundStatus.partial
    return DmteBound(p=table.p, set_label=label, p_a1=p_a1, p_a0=p_a0, alpha=alpha,
                     lower=lower, upper=upper, status=status)


def dmte_curve(tables: Iterable[ConditionalOutcomeTable], sets: Iterable[OutcomeSet]) -> List[DmteBound]:
    sets = list(sets)
    return [dmte_bounds(table, s) for table in tables for s in sets]
