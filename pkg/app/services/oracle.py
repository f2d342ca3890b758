"""Популяционный оракул для синтетической модели: закрытые формулы, истинный MTE^OO,
истинные границы по всем наборам предпосылок, интервалы Фреше и LIV-эстиманд."""
import math
from dataclasses import dataclass
from typing import Iterable, List, Sequence

import numpy as np
import pandas as pd
from loguru import logger
from scipy import integrate, optimize
from scipy.special import ndtr, ndtri
from scipy.stats import norm

from app.core.config import settings
from app.core.errors import ConfigError, NumericalError
from app.schemas.bounds import (AssumptionTier, BoundCurve, BoundPoint, BoundStatus,
                                ClosedFormCheck, FrechetInterval, OracleCurvePoint)
from app.schemas.dgp import DgpConfig
from app.schemas.discrete import DiscreteLadder, LadderLevel
from app.schemas.estimation import OutcomeGrid
from app.services.dgp import SQRT2, rng_for

ORACLE_COLUMNS = ["p", "alpha", "alpha_frechet", "beta_frechet", "v_lower", "mte",
                  "lb1", "ub1", "lb2", "ub2", "lb3", "ub3", "xi0", "liv", "status"]


class OutcomeMixture:
    """Равновесная смесь ½N(mu_a, sd²) + ½N(mu_b, sd²): закон Y_d* | S_d=1, V=p."""

    def __init__(self, mu_a: float, mu_b: float, sd: float):
        if sd <= 0:
            raise ConfigError("oracle needs outcome_noise_sd > 0: the conditional outcome law is continuous")
        self.means = np.array([mu_a, mu_b], dtype=float)
        self.sd = float(sd)

    @property
    def mean(self) -> float:
        return float(self.means.mean())

    def cdf(self, y):
        y = np.asarray(y, dtype=float)
        return 0.5 * (ndtr((y - self.means[0]) / self.sd) + ndtr((y - self.means[1]) / self.sd))

    def pdf(self, y):
        y = np.asarray(y, dtype=float)
        return 0.5 * (norm.pdf(y, self.means[0], self.sd) + norm.pdf(y, self.means[1], self.sd))

    def ppf(self, q: float) -> float:
        if not 0.0 < q < 1.0:
            raise ValueError(f"quantile level must be in (0, 1), got {q}")
        # смесь строго возрастает, корень в брекете единственный
        lo = self.means.min() + self.sd * ndtri(q)
        hi = self.means.max() + self.sd * ndtri(q)
        if lo == hi:
            return float(lo)
        return optimize.brentq(lambda y: float(self.cdf(y)) - q, lo, hi, xtol=1e-12, rtol=1e-14, maxiter=200)

    def partial_moment(self, lo: float, hi: float) -> float:
        """∫_lo^hi y dF(y) адаптивной квадратурой Гаусса-Кронрода (бесконечные пределы допустимы)."""
        value, abserr = integrate.quad(lambda y: y * float(self.pdf(y)), lo, hi,
                                       epsabs=settings.QUAD_TOL, epsrel=settings.QUAD_TOL, limit=200)
        if abserr > 1e3 * settings.QUAD_TOL:
            raise NumericalError(f"tail quadrature on [{lo}, {hi}] did not converge", achieved_error=abserr)
        return value

    def partial_moment_exact(self, lo: float, hi: float) -> float:
        """То же через формулу частичного момента нормального закона."""
        total = 0.0
        for mu in self.means:
            a, b = (lo - mu) / self.sd, (hi - mu) / self.sd
            total += 0.5 * (mu * (ndtr(b) - ndtr(a)) - self.sd * (norm.pdf(b) - norm.pdf(a)))
        return float(total)

    def tail_mean(self, share: float, tail: str) -> float:
        """E[Y | Y <= F⁻¹(share)] (tail='lower') или E[Y | Y > F⁻¹(1-share)] (tail='upper')."""
        if share <= 0.0:
            return -math.inf if tail == "lower" else math.inf
        if share >= 1.0:
            return self.mean
        if tail == "lower":
            return self.partial_moment(-np.inf, self.ppf(share)) / share
        return self.partial_moment(self.ppf(1.0 - share), np.inf) / share


@dataclass(frozen=True)
class ClosedForms:
    p: float
    m0: float
    m1: float
    alpha: float
    alpha_frechet: float
    beta_frechet: float
    v_lower: float
    mte: float
    xi0: float
    mixture0: OutcomeMixture
    mixture1: OutcomeMixture

    def mixture_cdf0(self, y):
        return self.mixture0.cdf(y)

    def mixture_cdf1(self, y):
        return self.mixture1.cdf(y)


def _check_p(p: float):
    if not 0.0 < p < 1.0:
        raise ConfigError(f"evaluation point p must lie in (0, 1), got {p}")


def _check_population(config: DgpConfig):
    if config.direct_effect != 0.0:
        raise ConfigError("oracle is defined only without a direct instrument effect on outcomes")


def selection_probabilities(config: DgpConfig, v) -> tuple:
    """m0(v) = P[S0=1|V=v], m1(v) = P[S1=1|V=v]."""
    t = ndtri(np.asarray(v, dtype=float))
    m0 = ndtr(config.delta0 * SQRT2 - t)
    m1 = ndtr((config.delta0 + config.delta1) * SQRT2 - t)
    return m0, m1


def arm_means(config: DgpConfig, v):
    """E[Y_d* | V=v] для d = 0, 1 (не зависит от отбора)."""
    t = ndtri(np.asarray(v, dtype=float))
    mu0 = 0.5 * (config.beta01 - config.beta00) * t
    mu1 = 0.5 * (config.beta11 - config.beta10) * t
    return mu0, mu1


def closed_forms(config: DgpConfig, p: float) -> ClosedForms:
    _check_p(p)
    _check_population(config)
    t = float(ndtri(p))
    m0, m1 = (float(m) for m in selection_probabilities(config, p))
    v_lower = max(m0 + m1 - 1.0, 0.0)
    mixture0 = OutcomeMixture(config.beta01 * t, -config.beta00 * t, config.outcome_noise_sd)
    mixture1 = OutcomeMixture(config.beta11 * t, -config.beta10 * t, config.outcome_noise_sd)
    return ClosedForms(
        p=p, m0=m0, m1=m1, alpha=m0 / m1,
        alpha_frechet=v_lower / m1, beta_frechet=v_lower / m0, v_lower=v_lower,
        mte=true_mte(config, p), xi0=mixture0.mean, mixture0=mixture0, mixture1=mixture1,
    )


def true_mte(config: DgpConfig, p: float) -> float:
    _check_p(p)
    return (config.beta11 - config.beta10 - config.beta01 + config.beta00) * float(ndtri(p)) / 2.0


def true_bounds(config: DgpConfig, p: float, tier: AssumptionTier) -> BoundPoint:
    cf = closed_forms(config, p)
    y1, y0 = cf.mixture1, cf.mixture0

    if tier == AssumptionTier.no_restriction:
        if cf.v_lower <= 0.0:
            return BoundPoint(p=p, tier=tier, lower=-math.inf, upper=math.inf, alpha=0.0, beta=0.0,
                              v_lower=0.0, xi0=cf.xi0, status=BoundStatus.lost)
        a, b = min(cf.alpha_frechet, 1.0), min(cf.beta_frechet, 1.0)
        lower = y1.tail_mean(a, "lower") - y0.tail_mean(b, "upper")
        upper = y1.tail_mean(a, "upper") - y0.tail_mean(b, "lower")
        status = BoundStatus.identified if a >= 1.0 and b >= 1.0 else BoundStatus.partial
        return BoundPoint(p=p, tier=tier, lower=lower, upper=upper, alpha=a, beta=b,
                          v_lower=cf.v_lower, xi0=cf.xi0, status=status)

    alpha = min(cf.alpha, 1.0)
    if tier == AssumptionTier.no_selection_effect:
        value = y1.mean - y0.mean
        return BoundPoint(p=p, tier=tier, lower=value, upper=value, alpha=1.0, beta=1.0,
                          v_lower=cf.v_lower, xi0=cf.xi0, status=BoundStatus.identified)

    upper = y1.tail_mean(alpha, "upper") - cf.xi0
    if tier == AssumptionTier.monotone:
        lower = y1.tail_mean(alpha, "lower") - cf.xi0
    elif tier == AssumptionTier.monotone_dominance:
        lower = y1.mean - cf.xi0
    else:
        raise ConfigError(f"Unknown assumption tier {tier}")
    status = BoundStatus.identified if alpha >= 1.0 else BoundStatus.partial
    return BoundPoint(p=p, tier=tier, lower=lower, upper=upper, alpha=alpha, beta=1.0,
                      v_lower=cf.v_lower, xi0=cf.xi0, status=status)


def frechet_interval(m0: float, m1: float, p: float = None) -> FrechetInterval:
    for name, value in (("m0", m0), ("m1", m1)):
        if not 0.0 <= value <= 1.0:
            raise ConfigError(f"{name} must be a probability, got {value}")
    return FrechetInterval(lower=max(m0 + m1 - 1.0, 0.0), upper=min(m0, m1), p=p)


def _quad(func, lo: float, hi: float) -> float:
    value, abserr = integrate.quad(func, lo, hi, epsabs=settings.QUAD_TOL, epsrel=settings.QUAD_TOL, limit=200)
    if abserr > 1e3 * settings.QUAD_TOL:
        raise NumericalError(f"quadrature on [{lo}, {hi}] did not converge", achieved_error=abserr)
    return value


def liv_estimand(config: DgpConfig, p: float) -> float:
    """LIV на отобранной выборке: смешивает интенсивную и экстенсивную маржу."""
    _check_p(p)
    _check_population(config)

    def m(v, arm):
        return float(selection_probabilities(config, v)[arm])

    def mean_times_m(v, arm):
        return float(arm_means(config, v)[arm]) * m(v, arm)

    e_s = _quad(lambda v: m(v, 1), 0.0, p) + _quad(lambda v: m(v, 0), p, 1.0)
    if e_s < 1e-12:
        raise NumericalError(f"E[S|P={p}] is numerically zero; LIV estimand undefined")
    e_ys = _quad(lambda v: mean_times_m(v, 1), 0.0, p) + _quad(lambda v: mean_times_m(v, 0), p, 1.0)
    marginal_ys = mean_times_m(p, 1) - mean_times_m(p, 0)
    marginal_s = m(p, 1) - m(p, 0)
    return marginal_ys / e_s - e_ys * marginal_s / e_s ** 2


def oracle_point(config: DgpConfig, p: float) -> OracleCurvePoint:
    cf = closed_forms(config, p)
    b1 = true_bounds(config, p, AssumptionTier.no_restriction)
    b2 = true_bounds(config, p, AssumptionTier.monotone)
    b3 = true_bounds(config, p, AssumptionTier.monotone_dominance)
    status = BoundStatus.lost if b1.status == BoundStatus.lost else b2.status
    return OracleCurvePoint(
        p=p, alpha=cf.alpha, alpha_frechet=cf.alpha_frechet, beta_frechet=cf.beta_frechet,
        v_lower=cf.v_lower, mte=cf.mte, lb1=b1.lower, ub1=b1.upper, lb2=b2.lower, ub2=b2.upper,
        lb3=b3.lower, ub3=b3.upper, xi0=cf.xi0, liv=liv_estimand(config, p), status=status,
    )


def oracle_curve(config: DgpConfig, p_grid: Iterable[float]) -> List[OracleCurvePoint]:
    points = [oracle_point(config, float(p)) for p in p_grid]
    logger.info(f"Oracle curve evaluated at {len(points)} points")
    return points


def oracle_curve_for_tier(config: DgpConfig, p_grid: Iterable[float], tier: AssumptionTier) -> BoundCurve:
    return BoundCurve(tier=tier, points=[true_bounds(config, float(p), tier) for p in p_grid])


def oracle_frame(points: Sequence[OracleCurvePoint]) -> pd.DataFrame:
    rows = [pt.model_dump() for pt in points]
    frame = pd.DataFrame(rows)
    frame["status"] = frame["status"].map(lambda s: getattr(s, "value", s))
    return frame[ORACLE_COLUMNS]


def frechet_zero_crossing(config: DgpConfig) -> float:
    """p, начиная с которого m0 + m1 <= 1 и доля always-observed не отделена от нуля."""
    return float(ndtr((config.delta0 * SQRT2 + (config.delta0 + config.delta1) * SQRT2) / 2.0))


def sign_identified_until(config: DgpConfig, tier: AssumptionTier, lo: float = 0.01, hi: float = 0.5) -> float:
    """Точка, где верхняя граница пересекает ноль: левее неё знак MTE^OO идентифицирован."""
    def upper(p):
        return true_bounds(config, p, tier).upper

    u_lo, u_hi = upper(lo), upper(hi)
    if not (math.isfinite(u_lo) and math.isfinite(u_hi)) or u_lo * u_hi > 0:
        raise NumericalError(f"upper bound does not change sign on [{lo}, {hi}] ({u_lo:.4f}, {u_hi:.4f})")
    return optimize.brentq(upper, lo, hi, xtol=1e-6)


def monte_carlo_closed_forms(config: DgpConfig, p: float, draws: int = 1_000_000, seed: int = 0) -> ClosedFormCheck:
    """Проверка закрытых формул перебором латентных величин при V = p."""
    _check_p(p)
    rng = rng_for(seed)
    theta = float(ndtri(p))
    eps_s = rng.standard_normal(draws)
    t = (rng.standard_normal(draws) >= 0).astype(float)
    eta = rng.standard_normal(draws)

    u_s = (theta + eps_s) / SQRT2
    s0 = u_s <= config.delta0
    s1 = u_s <= config.delta0 + config.delta1
    y0 = t * config.beta01 * theta + (1 - t) * (-config.beta00 * theta) + config.outcome_noise_sd * eta

    m0, m1 = s0.mean(), s1.mean()
    always = s0 & s1
    alpha = always.sum() / s1.sum()
    y_oo = y0[always]
    return ClosedFormCheck(
        p=p, draws=draws,
        m0=m0, m0_se=math.sqrt(m0 * (1 - m0) / draws),
        m1=m1, m1_se=math.sqrt(m1 * (1 - m1) / draws),
        alpha=alpha, alpha_se=math.sqrt(alpha * (1 - alpha) / s1.sum()),
        xi0=float(y_oo.mean()), xi0_se=float(y_oo.std(ddof=1) / math.sqrt(len(y_oo))),
    )


def selection_derivatives(config: DgpConfig, p: float, y_edges: np.ndarray) -> dict:
    """Точные ∂P[Y<=y,S=1,D=1|P=p]/∂p, −∂P[Y<=y,S=1,D=0|P=p]/∂p и ∂P[S=1|P=p]/∂p."""
    cf = closed_forms(config, p)
    y_edges = np.asarray(y_edges, dtype=float)
    return {
        "treated": cf.m1 * cf.mixture1.cdf(y_edges),
        "untreated": cf.m0 * cf.mixture0.cdf(y_edges),
        "selection": cf.m1 - cf.m0,
    }


def oracle_ladder(config: DgpConfig, p_levels: Sequence[float], grid: OutcomeGrid, nodes: int = 400) -> DiscreteLadder:
    """Популяционная лестница для дискретного инструмента с пропенсити p_levels.

    Ячейки считаются квадратурой Гаусса-Лежандра по V; крайние бины сетки открыты наружу.
    """
    _check_population(config)
    edges = grid.edges.copy()
    edges[0], edges[-1] = -np.inf, np.inf
    x, w = np.polynomial.legendre.leggauss(nodes)

    def integrate_arm(lo, hi, arm):
        v = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
        weights = 0.5 * (hi - lo) * w
        t = ndtri(v)
        m = selection_probabilities(config, v)[arm]
        b_treated, b_untreated = (config.beta11, config.beta10) if arm == 1 else (config.beta01, config.beta00)
        sd = config.outcome_noise_sd
        cdf = 0.5 * (ndtr((edges[None, :] - b_treated * t[:, None]) / sd)
                     + ndtr((edges[None, :] + b_untreated * t[:, None]) / sd))
        bins = np.diff(cdf, axis=1) * m[:, None]
        return float(weights @ m), weights @ bins

    levels = []
    for p in sorted(float(q) for q in p_levels):
        _check_p(p)
        e_sd, bins1 = integrate_arm(0.0, p, 1)
        e_s0, bins0 = integrate_arm(p, 1.0, 0)
        levels.append(LadderLevel(z_values=[float(ndtri(p))], p=p, e_sd=e_sd, e_s0=e_s0, bins1=bins1, bins0=bins0))
    return DiscreteLadder(levels=levels, grid=grid)
