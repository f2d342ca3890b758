"""Параметрический путь: логит-индексы по (p, p², x), аналитические производные и SCMTE."""
import math
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy.special import expit

from app.core.errors import ConfigError
from app.schemas.bounds import AssumptionTier, BoundCurve, BoundPoint, BoundStatus
from app.schemas.dgp import Sample
from app.schemas.estimation import (ConditionalOutcomeTable, OutcomeGrid, ParametricFit, PropensityConfig,
                                    TableStatus)
from app.services.npbounds import bounds_at
from app.services.propensity import fit_logit, newton_logit
from app.services.smoother import assemble_table

NONESTIMABLE_LIMIT = 0.5


def _regressors(p: np.ndarray, x: Optional[np.ndarray]) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    cols = [np.ones_like(p), p, p ** 2]
    if x is not None and x.shape[1]:
        cols.extend(x.T)
    return np.column_stack(cols)


def fit_parametric(sample: Sample, covariates: Optional[Sequence[str]] = None, grid: Optional[OutcomeGrid] = None,
                   propensity: Optional[PropensityConfig] = None, n_edges: int = 20) -> ParametricFit:
    """Один логит на каждую вероятность; p̂ из пропенсити подставляется вместо p."""
    covariates = list(sample.x_columns if covariates is None else covariates)
    unknown = [c for c in covariates if c not in sample.x_columns]
    if unknown:
        raise ConfigError(f"unknown covariate columns {unknown}")
    base = propensity or PropensityConfig()
    prop_columns = (sample.z_columns if base.columns is None else list(base.columns)) + covariates
    prop_fit = fit_logit(sample, base.model_copy(update={"columns": prop_columns}))

    kept = prop_fit.kept
    y, s, d = sample.y[kept], sample.s[kept], sample.d[kept]
    x = sample.columns(covariates)[kept] if covariates else None
    X = _regressors(prop_fit.fitted[kept], x)
    names = ["const", "p", "p2", *covariates]
    if grid is None:
        grid = OutcomeGrid.from_quantiles(y[s == 1], n_edges)
    indicators = grid.indicators(y)

    selection, bins = {}, {}
    for arm in (0, 1):
        in_arm = s * (d if arm == 1 else 1.0 - d)
        selection[arm] = newton_logit(X, in_arm, names, component=f"selection[d={arm}]",
                                      separation_index=base.separation_index)
        bins[arm] = [newton_logit(X, indicators[:, k] * in_arm, names, component=f"bin[d={arm},k={k + 1}]",
                                separation_index=base.separation_index)
                     for k in range(grid.n_bins)]
    logger.info(f"Parametric fit: {2 * (grid.n_bins + 1)} logit components, covariates={covariates}")
    return ParametricFit(propensity=prop_fit, covariate_columns=covariates, grid=grid, selection=selection, bins=bins)


def _index_derivative(coefficients: np.ndarray, p: float, x: np.ndarray, arm: int) -> float:
    """λ(индекс)·(c1 + 2·c2·p)·(−1)^{1−d}."""
    r = _regressors(np.array([p]), x.reshape(1, -1) if x.size else None)[0]
    mu = expit(coefficients @ r)
    slope = coefficients[1] + 2.0 * coefficients[2] * p
    return float((1.0 if arm == 1 else -1.0) * mu * (1.0 - mu) * slope)


def _row(fit: ParametricFit, x) -> np.ndarray:
    x = np.zeros(0) if x is None else np.asarray(x, dtype=float).ravel()
    if x.size != len(fit.covariate_columns):
        raise ConfigError(f"covariate row has {x.size} values, fit expects {len(fit.covariate_columns)}")
    return x


def parametric_derivatives(fit: ParametricFit, p: float, x=None) -> ConditionalOutcomeTable:
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"p must lie in [0, 1], got {p}")
    x = _row(fit, x)
    pi = {arm: _index_derivative(fit.selection[arm].coefficients, p, x, arm) for arm in (0, 1)}
    gamma = {arm: np.array([_index_derivative(res.coefficients, p, x, arm) for res in fit.bins[arm]])
             for arm in (0, 1)}
    return assemble_table(p, pi[0], pi[1], gamma[0], gamma[1], fit.grid, status=TableStatus.ok)


def consistency_gap(fit: ParametricFit, p: float, x=None) -> Tuple[float, float]:
    """|Σ_k γ̂_d − π̂_d| по плечам: бинные логиты оцениваются независимо."""
    table = parametric_derivatives(fit, p, x)
    return abs(table.gamma0.sum() - table.pi0), abs(table.gamma1.sum() - table.pi1)


def average_bounds(points: Sequence[BoundPoint], weights: Sequence[float], p: float,
                   tier: AssumptionTier) -> BoundPoint:
    """Среднее границ по строкам ковариат; потерянные и неоцениваемые строки исключаются с учётом доли."""
    weights = np.asarray(weights, dtype=float)
    usable = np.array([pt.finite for pt in points])
    total = weights.sum()
    excluded = float(weights[~usable].sum() / total) if total > 0 else 1.0
    if not usable.any():
        return BoundPoint(p=p, tier=tier, lower=math.nan, upper=math.nan, status=BoundStatus.nonestimable,
                          nonestimable_share=excluded)
    w = weights[usable] / weights[usable].sum()
    kept = [pt for pt, ok in zip(points, usable) if ok]

    def avg(attr):
        return float(w @ np.array([getattr(pt, attr) for pt in kept]))

    if excluded > NONESTIMABLE_LIMIT:
        status = BoundStatus.nonestimable
    elif any(pt.status == BoundStatus.partial for pt in kept):
        status = BoundStatus.partial
    else:
        status = BoundStatus.identified
    return BoundPoint(p=p, tier=tier, lower=avg("lower"), upper=avg("upper"), alpha=avg("alpha"),
                      beta=avg("beta"), v_lower=avg("v_lower"), xi0=avg("xi0"), status=status,
                      nonestimable_share=excluded)


def scmte_bounds(fit: ParametricFit, covariates: Optional[np.ndarray], p_grid: Iterable[float],
                 tier: AssumptionTier, fractional: bool = False) -> BoundCurve:
    """SCMTE: границы по каждой строке ковариат, усреднённые по эмпирическому F_X."""
    if covariates is None or not fit.covariate_columns:
        rows, counts = np.zeros((1, 0)), np.array([1.0])
    else:
        covariates = np.asarray(covariates, dtype=float)
        if np.isnan(covariates).any():
            raise ConfigError("covariate matrix contains missing values")
        rows, counts = np.unique(covariates, axis=0, return_counts=True)

    points = []
    for p in p_grid:
        p = float(p)
        per_row = [bounds_at(parametric_derivatives(fit, p, row), tier, fractional) for row in rows]
        point = average_bounds(per_row, counts, p, tier)
        if point.status == BoundStatus.nonestimable:
            logger.warning(f"SCMTE at p={p:.3f}: {point.nonestimable_share:.1%} of covariate mass excluded")
        points.append(point)
    return BoundCurve(tier=tier, points=points)
