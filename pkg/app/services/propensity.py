"""Шаг 1: пропенсити P(D=1|Z) логитом с обрезкой значений и общей опорой."""
from typing import List, Optional, Sequence

import numpy as np
from loguru import logger
from scipy import linalg
from scipy.special import expit

from app.core.config import settings
from app.core.errors import ConfigError, EstimationError, InsufficientDataError, RankDeficiencyError, SeparationError
from app.schemas.dgp import Sample
from app.schemas.estimation import LogitResult, PropensityConfig, PropensityFit

GRADIENT_TOL = 1e-8
MAX_HALVINGS = 60


def _log_likelihood(X: np.ndarray, y: np.ndarray, beta: np.ndarray, weights: np.ndarray) -> float:
    eta = X @ beta
    return float(weights @ (y * eta - np.logaddexp(0.0, eta)))


def _check_rank(X: np.ndarray, names: Sequence[str], component: str):
    _, r, pivots = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(X.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int((diag > tol).sum())
    if rank < X.shape[1]:
        raise RankDeficiencyError(component, [names[j] for j in pivots[rank:]])


def newton_logit(X: np.ndarray, y: np.ndarray, names: Sequence[str], component: str = "propensity",
                 weights: Optional[np.ndarray] = None, max_iter: Optional[int] = None,
                 separation_index: Optional[float] = None) -> LogitResult:
    """Логит ML методом Ньютона-Рафсона с дроблением шага.

    Сходимость: sup-норма среднего скора < 1e-8. Разделимость ловится по расходящемуся индексу:
    max|Xβ| выше separation_index (по умолчанию MTE_SEPARATION_INDEX).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    weights = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    max_iter = max_iter or settings.MAX_NEWTON_ITER
    separation_index = separation_index or settings.SEPARATION_INDEX
    if n <= k:
        raise InsufficientDataError(f"[{component}] logit needs more rows than coefficients ({k})", effective_n=n)
    _check_rank(X, names, component)

    beta = np.zeros(k)
    ll = _log_likelihood(X, y, beta, weights)
    trace = [ll]
    total = weights.sum()
    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        mu = expit(X @ beta)
        grad = X.T @ (weights * (y - mu))
        if np.max(np.abs(grad)) / total < GRADIENT_TOL:
            converged = True
            break
        hess = X.T @ (X * (weights * mu * (1.0 - mu))[:, None])
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            raise SeparationError(component, beta / max(np.linalg.norm(beta), 1e-300), names)

        # Step halving: правдоподобие не убывает
        scale = 1.0
        for _ in range(MAX_HALVINGS):
            candidate = beta + scale * step
            ll_new = _log_likelihood(X, y, candidate, weights)
            if ll_new >= ll - 1e-12 * abs(ll):
                break
            scale *= 0.5
        else:
            break
        beta, ll = candidate, max(ll_new, ll)
        trace.append(ll)
        if np.max(np.abs(X @ beta)) > separation_index:
            raise SeparationError(component, beta / np.linalg.norm(beta), names)

    if np.max(np.abs(X @ beta)) > separation_index:
        raise SeparationError(component, beta / np.linalg.norm(beta), names)
    if not converged:
        logger.warning(f"[{component}] Newton stopped after {iteration} iterations without meeting the gradient tolerance")

    mu = expit(X @ beta)
    info = X.T @ (X * (weights * mu * (1.0 - mu))[:, None])
    try:
        std_errors = np.sqrt(np.diag(np.linalg.inv(info)))
    except np.linalg.LinAlgError:
        raise EstimationError(f"[{component}] information matrix is singular at the optimum")
    return LogitResult(component=component, names=list(names), coefficients=beta, std_errors=std_errors,
                       log_likelihood=ll, trace=trace, iterations=iteration)


def common_support(fitted: np.ndarray, d: np.ndarray, trim_pct: float) -> np.ndarray:
    """Пересечение опор P̂ у леченых и нелеченых, с обрезкой trim_pct с каждого хвоста."""
    treated, untreated = fitted[d == 1], fitted[d == 0]
    if treated.size == 0 or untreated.size == 0:
        raise EstimationError("common support needs both treated and untreated observations")
    lo = max(treated.min(), untreated.min())
    hi = min(treated.max(), untreated.max())
    kept = (fitted >= lo) & (fitted <= hi)
    if not kept.any():
        raise EstimationError("treated and untreated propensity distributions do not overlap")
    if trim_pct > 0:
        q_lo, q_hi = np.quantile(fitted[kept], [trim_pct, 1.0 - trim_pct])
        kept &= (fitted >= q_lo) & (fitted <= q_hi)
    return kept


def design_matrix(sample: Sample, columns: List[str]) -> np.ndarray:
    if not columns:
        return np.ones((sample.n, 1))
    return np.column_stack([np.ones(sample.n), sample.columns(columns)])


def fit_logit(sample: Sample, config: PropensityConfig) -> PropensityFit:
    columns = sample.z_columns if config.columns is None else list(config.columns)
    try:
        X = design_matrix(sample, columns)
    except KeyError as e:
        raise ConfigError(f"propensity specification: {e}") from e
    names = ["const", *columns]
    result = newton_logit(X, sample.d, names, component="propensity", max_iter=config.max_iter,
                          separation_index=config.separation_index)

    fitted = np.clip(expit(X @ result.coefficients), config.lambda_trim, 1.0 - config.lambda_trim)
    kept = common_support(fitted, sample.d, config.support_trim_pct)
    logger.info(
        f"Propensity fit: {dict(zip(names, np.round(result.coefficients, 4)))}, "
        f"loglik={result.log_likelihood:.3f}, kept {kept.sum()}/{sample.n} rows"
    )
    return PropensityFit(names=names, coefficients=result.coefficients, std_errors=result.std_errors,
                         fitted=fitted, kept=kept, log_likelihood=result.log_likelihood,
                         iterations=result.iterations, config=config)
