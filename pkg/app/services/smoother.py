"""Шаги 2-3: локально-полиномиальные производные по пропенсити и таблица условных распределений."""
import math
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from loguru import logger
from numpy.polynomial import polynomial as poly
from scipy import integrate

from app.core.errors import EstimationError, InsufficientDataError, SingularDesignError
from app.schemas.dgp import Sample
from app.schemas.estimation import (ConditionalOutcomeTable, OutcomeGrid, PropensityFit, SmootherConfig,
                                    TableStatus)

MAX_CONDITION = 1e12


def kernel_weights(u: np.ndarray, kernel: str) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) <= 1.0
    if kernel == "epanechnikov":
        return np.where(inside, 0.75 * (1.0 - u ** 2), 0.0)
    if kernel == "triangular":
        return np.where(inside, 1.0 - np.abs(u), 0.0)
    if kernel == "uniform":
        return np.where(inside, 0.5, 0.0)
    if kernel == "gaussian":
        return np.exp(-0.5 * u ** 2) / math.sqrt(2.0 * math.pi)
    raise ValueError(f"Unknown kernel '{kernel}'")


def _kernel_support(kernel: str):
    return (-np.inf, np.inf) if kernel == "gaussian" else (-1.0, 1.0)


@lru_cache(maxsize=None)
def equivalent_kernel_constant(kernel: str, degree: int, order: int) -> Optional[float]:
    """Константа C_{ν,p}(K) правила большого пальца Фана-Гайбельса.

    None, если момент порядка p+1 эквивалентного ядра равен нулю (p − ν чётно).
    """
    lo, hi = _kernel_support(kernel)

    def moment(j):
        return integrate.quad(lambda t: t ** j * float(kernel_weights(t, kernel)), lo, hi)[0]

    S = np.array([[moment(i + j) for j in range(degree + 1)] for i in range(degree + 1)])
    row = np.linalg.solve(S, np.eye(degree + 1)[order])

    def equivalent(t):
        return float(row @ np.array([t ** j for j in range(degree + 1)])) * float(kernel_weights(t, kernel))

    squared = integrate.quad(lambda t: equivalent(t) ** 2, lo, hi)[0]
    bias_moment = integrate.quad(lambda t: t ** (degree + 1) * equivalent(t), lo, hi)[0]
    if abs(bias_moment) < 1e-12:
        return None
    numerator = math.factorial(degree + 1) ** 2 * (2 * order + 1) * squared
    denominator = 2.0 * (degree + 1 - order) * bias_moment ** 2
    return (numerator / denominator) ** (1.0 / (2 * degree + 3))


def silverman_bandwidth(phat: np.ndarray) -> float:
    return 1.06 * float(np.std(phat, ddof=1)) * len(phat) ** (-0.2)


def fan_gijbels_bandwidth(phat: np.ndarray, response: np.ndarray, config: SmootherConfig) -> float:
    """Правило большого пальца для производной: пилотом служит глобальный полином степени p+3."""
    const = equivalent_kernel_constant(config.kernel, config.degree, config.derivative_selector)
    if const is None:
        logger.warning("Equivalent-kernel bias moment vanishes for this degree; using the Silverman rule")
        return silverman_bandwidth(phat)
    span = float(phat.max() - phat.min())
    pilot_degree = config.degree + 3
    coef = poly.polyfit(phat, response, pilot_degree)
    resid = response - poly.polyval(phat, coef)
    sigma2 = float(resid @ resid) / max(len(phat) - pilot_degree - 1, 1)
    curvature = poly.polyval(phat, poly.polyder(coef, config.degree + 1))
    denom = float(curvature @ curvature)
    cap = 0.5 * span
    if denom <= 0.0:
        return cap
    h = const * (sigma2 * span / denom) ** (1.0 / (2 * config.degree + 3))
    return float(min(h, cap))


def select_bandwidth(phat: np.ndarray, responses: Sequence[np.ndarray], config: SmootherConfig) -> float:
    """Одна полоса на все отклики точки p: наклон остаётся линейным по отклику."""
    if isinstance(config.bandwidth, float):
        h = config.bandwidth
    elif config.bandwidth == "silverman":
        h = silverman_bandwidth(phat)
    else:
        h = float(np.mean([fan_gijbels_bandwidth(phat, np.asarray(r, dtype=float), config) for r in responses]))
    return h * config.bandwidth_scale


class LocalPolynomial:
    """Взвешенный МНК min Σ[r − c0 − c1(P̂−p) − c2(P̂−p)²]²·K((P̂−p)/h).

    Коэффициент при (P̂−p)^j линеен по отклику, веса считаются один раз.
    """

    def __init__(self, phat: np.ndarray, p: float, bandwidth: float, config: SmootherConfig):
        if not bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {bandwidth}")
        self.p = p
        self.h = bandwidth
        self.config = config
        u = (np.asarray(phat, dtype=float) - p) / bandwidth
        w = kernel_weights(u, config.kernel)
        self.window = w > 0
        distinct = np.unique(np.asarray(phat)[self.window]).size
        if distinct < config.degree + 1:
            raise InsufficientDataError(f"kernel window at p={p:.4f} holds {distinct} distinct propensity values",
                                        effective_n=int(self.window.sum()))

        uw = u[self.window]
        design = np.vander(uw, config.degree + 1, increasing=True)
        weighted = design * w[self.window][:, None]
        gram = design.T @ weighted
        if np.linalg.cond(gram) > MAX_CONDITION:
            raise SingularDesignError(f"local normal equations are singular at p={p:.4f}")
        j = config.derivative_selector
        row = np.linalg.solve(gram, weighted.T)[j]
        self.weights = row * math.factorial(j) / bandwidth ** j

    @property
    def effective_n(self) -> int:
        return int(self.window.sum())

    def derivative(self, responses: np.ndarray, sign: int = 1):
        responses = np.asarray(responses, dtype=float)
        return sign * (self.weights @ responses[self.window])


def local_derivative(responses: np.ndarray, phat: np.ndarray, p: float, sign: int, config: SmootherConfig,
                     bandwidth: Optional[float] = None) -> float:
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    h = bandwidth if bandwidth is not None else select_bandwidth(phat, [responses], config)
    return float(LocalPolynomial(phat, p, h, config).derivative(responses, sign))


def _cumulative(f: np.ndarray) -> np.ndarray:
    F = np.minimum(np.cumsum(f), 1.0)
    F[-1] = 1.0
    return F


def assemble_table(p: float, pi0: float, pi1: float, gamma0: np.ndarray, gamma1: np.ndarray, grid: OutcomeGrid,
                   status: TableStatus = TableStatus.ok, bandwidth: Optional[float] = None) -> ConditionalOutcomeTable:
    """Очистка: отрицательные массы бинов обнуляются, f нормируется, α̂ прижимается к [0, 1]."""
    gamma0 = np.asarray(gamma0, dtype=float)
    gamma1 = np.asarray(gamma1, dtype=float)
    pos0, pos1 = np.clip(gamma0, 0.0, None), np.clip(gamma1, 0.0, None)
    alpha_hat = float(np.clip(pi0 / pi1, 0.0, 1.0)) if pi1 > 0 else 0.0
    if pi1 <= 0 or pos1.sum() <= 0 or pos0.sum() <= 0:
        zeros = np.zeros(grid.n_bins)
        return ConditionalOutcomeTable(p=p, pi0=pi0, pi1=pi1, gamma0=gamma0, gamma1=gamma1, f0=zeros, f1=zeros,
                                       F0=zeros, F1=zeros, alpha_hat=alpha_hat, grid=grid,
                                       status=TableStatus.nonestimable, bandwidth=bandwidth)
    f0, f1 = pos0 / pos0.sum(), pos1 / pos1.sum()
    return ConditionalOutcomeTable(p=p, pi0=pi0, pi1=pi1, gamma0=gamma0, gamma1=gamma1, f0=f0, f1=f1,
                                   F0=_cumulative(f0), F1=_cumulative(f1), alpha_hat=alpha_hat, grid=grid,
                                   status=status, bandwidth=bandwidth)


def table_bandwidth(sample: Sample, fit: PropensityFit, config: SmootherConfig) -> float:
    kept = fit.kept
    s, d = sample.s[kept], sample.d[kept]
    return select_bandwidth(fit.fitted[kept], [s * d, s * (1.0 - d)], config)


def build_table(sample: Sample, fit: PropensityFit, p: float, grid: OutcomeGrid, config: SmootherConfig,
                bandwidth: Optional[float] = None) -> ConditionalOutcomeTable:
    kept = fit.kept
    phat = fit.fitted[kept]
    y, s, d = sample.y[kept], sample.s[kept], sample.d[kept]
    treated, untreated = s * d, s * (1.0 - d)
    h = bandwidth if bandwidth is not None else select_bandwidth(phat, [treated, untreated], config)

    zeros = np.zeros(grid.n_bins)
    try:
        lp = LocalPolynomial(phat, p, h, config)
    except EstimationError as e:
        logger.warning(f"Table at p={p:.3f} is not estimable: {e}")
        return assemble_table(p, 0.0, 0.0, zeros, zeros, grid, bandwidth=h)

    bins = grid.indicators(y)
    gamma1 = lp.derivative(bins * treated[:, None], sign=1)
    gamma0 = lp.derivative(bins * untreated[:, None], sign=-1)
    pi1 = float(lp.derivative(treated, sign=1))
    pi0 = float(lp.derivative(untreated, sign=-1))

    status = TableStatus.ok
    if p < phat.min() + h / 2 or p > phat.max() - h / 2:
        status = TableStatus.boundary
    table = assemble_table(p, pi0, pi1, gamma0, gamma1, grid, status=status, bandwidth=h)
    if not table.estimable:
        logger.warning(f"Table at p={p:.3f} is not estimable (pi1={pi1:.4f})")
    return table
