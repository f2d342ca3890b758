"""Агрегирование границ MTE^OO в ATE/ATT/ATU/LATE/PRTE для always-observed."""
import math
from typing import Callable, Sequence, Union

import numpy as np
from loguru import logger
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.stats import gaussian_kde

from app.core.errors import ConfigError, ZeroWeightError
from app.schemas.aggregate import AggregateBound, WeightCurve, WeightKind, WeightSpec
from app.schemas.bounds import BoundCurve, BoundStatus

Tabulated = Union[Callable[[np.ndarray], np.ndarray], Sequence[float], np.ndarray]
SUPPORT_SLACK = 0.01


def _tabulate(obj: Tabulated, grid: np.ndarray) -> np.ndarray:
    values = obj(grid) if callable(obj) else obj
    values = np.broadcast_to(np.asarray(values, dtype=float), grid.shape).copy()
    if not np.all(np.isfinite(values)):
        raise ConfigError("weight inputs must be finite on the evaluation grid")
    return values


def propensity_density(phat: np.ndarray, p_grid: np.ndarray) -> np.ndarray:
    """Ядерная плотность P̂ на сетке p; при неполной опоре веса нормируются на наблюдаемой."""
    phat = np.asarray(phat, dtype=float)
    if phat.min() > SUPPORT_SLACK or phat.max() < 1.0 - SUPPORT_SLACK:
        logger.warning(
            f"Propensity support [{phat.min():.3f}, {phat.max():.3f}] falls short of the unit interval; "
            f"weights are renormalized on the observed support"
        )
    return gaussian_kde(phat)(np.asarray(p_grid, dtype=float))


def weight_curve(spec: WeightSpec, pi0: Tabulated, f_p: Tabulated, p_grid: Sequence[float]) -> WeightCurve:
    """ω(p) ∝ h(p)·π0(p), нормированная трапециями к единице на своей области."""
    grid = np.asarray(p_grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 2 or np.any(np.diff(grid) <= 0):
        raise ConfigError("p grid must be strictly increasing with at least two points")
    pi0 = _tabulate(pi0, grid)
    if np.any(pi0 < 0):
        logger.warning(f"{spec.label}: negative pi0 at {int((pi0 < 0).sum())} grid points clamped to 0")
        pi0 = np.clip(pi0, 0.0, None)

    domain = np.ones_like(grid, dtype=bool)
    if spec.kind == WeightKind.ate:
        h = np.ones_like(grid)
    elif spec.kind in (WeightKind.att, WeightKind.atu):
        density = _tabulate(f_p, grid)
        cdf = cumulative_trapezoid(density, grid, initial=0.0)
        if cdf[-1] <= 0:
            raise ZeroWeightError(f"{spec.label}: propensity density integrates to zero on the grid")
        cdf = cdf / cdf[-1]
        h = 1.0 - cdf if spec.kind == WeightKind.att else cdf
    elif spec.kind == WeightKind.late:
        domain = (grid >= spec.p_lo - 1e-12) & (grid <= spec.p_hi + 1e-12)
        if domain.sum() < 2:
            raise ZeroWeightError(f"{spec.label}: fewer than two grid points inside the interval")
        lo, hi = grid[domain][0], grid[domain][-1]
        if not (math.isclose(lo, spec.p_lo, abs_tol=1e-9) and math.isclose(hi, spec.p_hi, abs_tol=1e-9)):
            logger.warning(f"{spec.label}: interval snapped to grid points [{lo:.4f}, {hi:.4f}]")
        h = domain.astype(float)
    else:
        h = spec.policy.shift(grid)

    raw = np.where(domain, h * pi0, 0.0)
    normalizer = float(trapezoid(raw[domain], grid[domain]))
    if abs(normalizer) < 1e-14:
        raise ZeroWeightError(f"{spec.label}: weight normalizer is zero, the parameter is undefined")
    return WeightCurve(label=spec.label, p=grid, omega=raw / normalizer, domain=domain, normalizer=normalizer)


def aggregate_bounds(curve: BoundCurve, weight: WeightCurve) -> AggregateBound:
    """∫Δ̲·ω dp и ∫Δ̄·ω dp трапециями; отрицательный вес берёт противоположный конец интервала."""
    grid = curve.p
    if len(grid) != len(weight.p) or not np.allclose(grid, weight.p, atol=1e-12):
        raise ConfigError("bound curve and weight curve are tabulated on different p grids")
    dom = weight.domain
    p, omega = grid[dom], weight.omega[dom]
    lower, upper = curve.lower[dom], curve.upper[dom]
    integral = float(trapezoid(omega, p))

    broken = ~(np.isfinite(lower) & np.isfinite(upper))
    lost_mass = float(trapezoid(np.abs(omega) * broken, p))
    if lost_mass > 0:
        logger.warning(f"{weight.label}: {lost_mass:.3f} of weight mass sits on lost/nonestimable points")
        return AggregateBound(kind=weight.label, lower=-math.inf, upper=math.inf, weight_integral=integral,
                              lost_mass=lost_mass, status=BoundStatus.lost)

    lower, upper = np.where(broken, 0.0, lower), np.where(broken, 0.0, upper)
    positive = omega >= 0
    lo = float(trapezoid(np.where(positive, lower, upper) * omega, p))
    hi = float(trapezoid(np.where(positive, upper, lower) * omega, p))
    status = BoundStatus.identified if np.allclose(lower, upper) else BoundStatus.partial
    return AggregateBound(kind=weight.label, lower=lo, upper=hi, weight_integral=integral, status=status)
