"""Границы LATE^OO при многозначном дискретном инструменте."""
import math
from typing import List, Optional

import numpy as np
from loguru import logger

from app.core.errors import AssumptionViolation, ConfigError
from app.schemas.bounds import AssumptionTier, BoundStatus
from app.schemas.dgp import Sample
from app.schemas.discrete import DiscreteLadder, LadderLevel, LateBound
from app.schemas.estimation import OutcomeGrid
from app.services.npbounds import bounds_at
from app.services.smoother import assemble_table

SAME_P_TOL = 1e-12


def _merge(levels: List[LadderLevel]) -> List[LadderLevel]:
    """Уровни с одинаковым p̂ не уточняют разбиение и сливаются в один с весами по n."""
    merged: List[LadderLevel] = []
    for level in sorted(levels, key=lambda lvl: lvl.p):
        if merged and abs(level.p - merged[-1].p) <= SAME_P_TOL:
            prev = merged[-1]
            n = prev.n + level.n
            wa, wb = prev.n / n, level.n / n
            merged[-1] = LadderLevel(
                z_values=prev.z_values + level.z_values, p=wa * prev.p + wb * level.p, n=n,
                e_sd=wa * prev.e_sd + wb * level.e_sd, e_s0=wa * prev.e_s0 + wb * level.e_s0,
                bins1=wa * prev.bins1 + wb * level.bins1, bins0=wa * prev.bins0 + wb * level.bins0,
            )
            logger.info(f"Instrument values {prev.z_values} and {level.z_values} share p={level.p:.4f}; merged")
        else:
            merged.append(level)
    return merged


def build_ladder(sample: Sample, grid: Optional[OutcomeGrid] = None, z_column: Optional[str] = None,
                 n_edges: int = 11) -> DiscreteLadder:
    z_column = z_column or sample.z_columns[0]
    if z_column not in sample.z_columns:
        raise ConfigError(f"unknown instrument column '{z_column}'")
    y, s, d = sample.y, sample.s, sample.d
    if grid is None:
        grid = OutcomeGrid.from_quantiles(y[s == 1], n_edges)
    bins = grid.indicators(y)
    treated, untreated = s * d, s * (1.0 - d)

    z = sample.frame[z_column].to_numpy()
    levels = []
    for value in np.unique(z):
        cell = z == value
        p = float(d[cell].mean())
        if p <= 0.0 or p >= 1.0:
            raise AssumptionViolation(f"instrument value {value} has propensity {p}; levels must lie in (0, 1)")
        levels.append(LadderLevel(
            z_values=[float(value)], p=p, n=int(cell.sum()),
            e_sd=float(treated[cell].mean()), e_s0=float(untreated[cell].mean()),
            bins1=(bins[cell] * treated[cell, None]).mean(axis=0),
            bins0=(bins[cell] * untreated[cell, None]).mean(axis=0),
        ))
    ladder = DiscreteLadder(levels=_merge(levels), grid=grid)
    logger.info(f"Discrete ladder: {len(ladder.levels)} levels, p = {np.round(ladder.p, 4).tolist()}")
    return ladder


def late_bounds(ladder: DiscreteLadder, ell: int, fractional: bool = False) -> LateBound:
    """Интервал (p_{ℓ−1}, p_ℓ], ℓ = 2..K: α̃ = ΔE[S(1−D)] / ΔE[SD], обрезка распределения леченых."""
    if not 2 <= ell <= len(ladder.levels):
        raise ConfigError(f"interval index must be in 2..{len(ladder.levels)}, got {ell}")
    lo, hi = ladder.levels[ell - 2], ladder.levels[ell - 1]
    width = hi.p - lo.p
    rise_treated = hi.e_sd - lo.e_sd
    drop_untreated = lo.e_s0 - hi.e_s0
    base = dict(ell=ell, p_lo=lo.p, p_hi=hi.p)

    if rise_treated <= 0 or drop_untreated < 0:
        note = f"negative difference quotient (dE[SD]={rise_treated:.4g}, -dE[S(1-D)]={drop_untreated:.4g})"
        logger.warning(f"Interval {ell}: {note}; bounds suppressed")
        return LateBound(**base, status=BoundStatus.nonestimable, note=note)

    alpha_tilde = min(drop_untreated / rise_treated, 1.0)
    if alpha_tilde <= 0.0:
        return LateBound(**base, alpha_tilde=0.0, lower=-math.inf, upper=math.inf, status=BoundStatus.lost)

    table = assemble_table(
        p=0.5 * (lo.p + hi.p), pi0=drop_untreated / width, pi1=rise_treated / width,
        gamma0=(lo.bins0 - hi.bins0) / width, gamma1=(hi.bins1 - lo.bins1) / width, grid=ladder.grid,
    )
    point = bounds_at(table, AssumptionTier.monotone, fractional)
    return LateBound(**base, alpha_tilde=table.alpha_hat, lower=point.lower, upper=point.upper,
                     xi0=point.xi0, status=point.status)


def all_late_bounds(ladder: DiscreteLadder, fractional: bool = False) -> List[LateBound]:
    return [late_bounds(ladder, ell, fractional) for ell in range(2, len(ladder.levels) + 1)]
