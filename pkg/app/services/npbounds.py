"""Непараметрические границы MTE^OO из таблиц условных распределений (шаги 3-5)."""
import math
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd
from loguru import logger

from app.core.errors import EstimationError
from app.schemas.bounds import AssumptionTier, BoundCurve, BoundPoint, BoundStatus, PointEstimate
from app.schemas.dgp import Sample
from app.schemas.estimation import (ConditionalOutcomeTable, OutcomeGrid, PropensityConfig, PropensityFit,
                                    SmootherConfig)
from app.services.propensity import fit_logit
from app.services.smoother import LocalPolynomial, build_table, select_bandwidth, table_bandwidth

# F̂ это накопленная сумма, поэтому сравнение с долей делаем с допуском на округление
EPS = 1e-12
DENOMINATOR_FLOOR = 1e-8
NESTING_TOL = 1e-9
# от широкого к узкому
NESTED_TIERS = (AssumptionTier.no_restriction, AssumptionTier.monotone, AssumptionTier.monotone_dominance)


def _tail_mass(f: np.ndarray, F: np.ndarray, share: float, tail: str, fractional: bool) -> np.ndarray:
    if fractional:
        if tail == "lower":
            before = F - f
            return np.clip(np.minimum(f, share - before), 0.0, None)
        after = 1.0 - F
        return np.clip(np.minimum(f, share - after), 0.0, None)
    if tail == "lower":
        return np.where(F <= share + EPS, f, 0.0)
    return np.where(1.0 - F < share - EPS, f, 0.0)


def trimmed_mean(table: ConditionalOutcomeTable, arm: int, share: float, tail: str,
                 fractional: bool = False) -> float:
    """Хвостовое среднее: Σ ȳ_k·1{F̂_k <= s}·f̂_k/s (нижний хвост) или Σ ȳ_k·1{1−F̂_k < s}·f̂_k/s (верхний).

    При fractional=True пограничный бин входит пропорционально непокрытой доле.
    Нулевая доля даёт ∓inf: граница не идентифицирована.
    """
    if tail not in ("lower", "upper"):
        raise ValueError(f"tail must be 'lower' or 'upper', got {tail}")
    if not table.estimable:
        raise EstimationError(f"table at p={table.p} is not estimable")
    if share <= 0.0:
        return -math.inf if tail == "lower" else math.inf
    share = min(share, 1.0)
    mass = _tail_mass(table.f(arm), table.F(arm), share, tail, fractional)
    return float(table.grid.centers @ mass) / share


def arm_mean(table: ConditionalOutcomeTable, arm: int) -> float:
    return float(table.grid.centers @ table.f(arm))


def _nonestimable(table: ConditionalOutcomeTable, tier: AssumptionTier) -> BoundPoint:
    return BoundPoint(p=table.p, tier=tier, lower=math.nan, upper=math.nan, alpha=table.alpha_hat,
                      status=BoundStatus.nonestimable)


def frechet_lower(table: ConditionalOutcomeTable) -> float:
    """vℓ = max{m̂₀ + m̂₁ − 1, 0} при m̂_d = π̂_d, прижатых к [0, 1]."""
    m0, m1 = float(np.clip(table.pi0, 0.0, 1.0)), float(np.clip(table.pi1, 0.0, 1.0))
    return max(m0 + m1 - 1.0, 0.0)


def _tier_fields(table: ConditionalOutcomeTable, fractional: bool) -> Dict[AssumptionTier, dict]:
    p = table.p
    xi0 = arm_mean(table, 0)
    v_lower = frechet_lower(table)
    fields = {}

    # 1. Без отбора: точка
    value = arm_mean(table, 1) - xi0
    fields[AssumptionTier.no_selection_effect] = dict(
        p=p, tier=AssumptionTier.no_selection_effect, lower=value, upper=value, alpha=1.0, beta=1.0,
        v_lower=v_lower, xi0=xi0, status=BoundStatus.identified)

    # 2. Без ограничений: доли из нижней границы Фреше
    tier = AssumptionTier.no_restriction
    if v_lower <= 0.0:
        fields[tier] = dict(p=p, tier=tier, lower=-math.inf, upper=math.inf, alpha=0.0, beta=0.0,
                            v_lower=0.0, xi0=xi0, status=BoundStatus.lost)
    else:
        a = min(v_lower / float(np.clip(table.pi1, 0.0, 1.0)), 1.0)
        b = min(v_lower / float(np.clip(table.pi0, 0.0, 1.0)), 1.0)
        lower = trimmed_mean(table, 1, a, "lower", fractional) - trimmed_mean(table, 0, b, "upper", fractional)
        upper = trimmed_mean(table, 1, a, "upper", fractional) - trimmed_mean(table, 0, b, "lower", fractional)
        status = BoundStatus.identified if a >= 1.0 and b >= 1.0 else BoundStatus.partial
        fields[tier] = dict(p=p, tier=tier, lower=lower, upper=upper, alpha=a, beta=b, v_lower=v_lower,
                            xi0=xi0, status=status)

    # 3. Монотонность и монотонность + доминирование: обрезка леченых на α̂
    alpha = table.alpha_hat
    for tier in (AssumptionTier.monotone, AssumptionTier.monotone_dominance):
        if alpha <= 0.0:
            fields[tier] = dict(p=p, tier=tier, lower=-math.inf, upper=math.inf, alpha=0.0, beta=1.0,
                                v_lower=v_lower, xi0=xi0, status=BoundStatus.lost)
            continue
        upper = trimmed_mean(table, 1, alpha, "upper", fractional) - xi0
        if tier == AssumptionTier.monotone:
            lower = trimmed_mean(table, 1, alpha, "lower", fractional) - xi0
        else:
            lower = arm_mean(table, 1) - xi0
        status = BoundStatus.identified if alpha >= 1.0 else BoundStatus.partial
        fields[tier] = dict(p=p, tier=tier, lower=lower, upper=upper, alpha=alpha, beta=1.0,
                            v_lower=v_lower, xi0=xi0, status=status)
    return fields


def _consistent(table: ConditionalOutcomeTable, fields: Dict[AssumptionTier, dict]) -> bool:
    """Хвостовые средние по разные стороны от среднего, границы не пересекаются, наборы вложены."""
    shares = []
    mono, wide = fields[AssumptionTier.monotone], fields[AssumptionTier.no_restriction]
    if mono["status"] != BoundStatus.lost:
        shares.append((1, mono["alpha"]))
    if wide["status"] != BoundStatus.lost:
        shares += [(1, wide["alpha"]), (0, wide["beta"])]
    for arm, share in shares:
        mean = arm_mean(table, arm)
        if trimmed_mean(table, arm, share, "lower") > mean + NESTING_TOL:
            return False
        if trimmed_mean(table, arm, share, "upper") < mean - NESTING_TOL:
            return False

    for f in fields.values():
        if math.isfinite(f["lower"]) and math.isfinite(f["upper"]) and f["lower"] > f["upper"]:
            return False
    for inner, outer in zip(NESTED_TIERS[1:], NESTED_TIERS[:-1]):
        a, b = fields[inner], fields[outer]
        if a["lower"] < b["lower"] - NESTING_TOL or a["upper"] > b["upper"] + NESTING_TOL:
            return False
    return True


def table_bounds(table: ConditionalOutcomeTable, tiers: Iterable[AssumptionTier],
                 fractional: bool = False) -> Dict[AssumptionTier, BoundPoint]:
    """Все наборы предпосылок считаются по одной таблице одной и той же формой обрезки."""
    tiers = list(tiers)
    if not table.estimable:
        return {tier: _nonestimable(table, tier) for tier in tiers}
    fields = _tier_fields(table, fractional)
    if not fractional and not _consistent(table, fields):
        # индикаторная форма ломается, когда один бин несёт почти всю массу хвоста
        logger.debug(f"Indicator trimming inconsistent at p={table.p:.3f}, using proportional boundary bins")
        fields = _tier_fields(table, True)
    return {tier: BoundPoint(**fields[tier]) for tier in tiers}


def bounds_at(table: ConditionalOutcomeTable, tier: AssumptionTier, fractional: bool = False) -> BoundPoint:
    if tier not in NESTED_TIERS and tier != AssumptionTier.no_selection_effect:
        raise ValueError(f"Unknown assumption tier {tier}")
    return table_bounds(table, [tier], fractional)[tier]


def _kept_arrays(sample: Sample, fit: PropensityFit):
    kept = fit.kept
    return fit.fitted[kept], sample.y[kept], sample.s[kept], sample.d[kept]


def _derivatives(phat: np.ndarray, p: float, responses: Dict[str, np.ndarray], config: SmootherConfig,
                 bandwidth: Optional[float]) -> Dict[str, float]:
    h = bandwidth if bandwidth is not None else select_bandwidth(phat, list(responses.values()), config)
    lp = LocalPolynomial(phat, p, h, config)
    return {name: float(lp.derivative(r)) for name, r in responses.items()}


def selection_mte(sample: Sample, fit: PropensityFit, p: float, config: SmootherConfig,
                  bandwidth: Optional[float] = None) -> PointEstimate:
    """E[S1 − S0 | V=p] = ∂E[S|P=p]/∂p: эффект лечения на вероятность наблюдаться."""
    phat, _, s, _ = _kept_arrays(sample, fit)
    value = _derivatives(phat, p, {"s": s}, config, bandwidth)["s"]
    return PointEstimate(name="selection_mte", p=p, value=value)


def unconditional_mte(sample: Sample, fit: PropensityFit, p: float, config: SmootherConfig,
                      bandwidth: Optional[float] = None) -> PointEstimate:
    """Отношение производных YSD/SD минус аналог для (1−D).

    Совпадает с безусловным MTE только при (S0,S1) ⊥ (Y0*,Y1*) | V.
    """
    phat, y, s, d = _kept_arrays(sample, fit)
    der = _derivatives(phat, p, {
        "ysd": y * s * d, "sd": s * d, "ys0": y * s * (1 - d), "s0": s * (1 - d),
    }, config, bandwidth)
    if abs(der["sd"]) < DENOMINATOR_FLOOR or abs(der["s0"]) < DENOMINATOR_FLOOR:
        return PointEstimate(name="unconditional_mte", p=p, value=math.nan, status=BoundStatus.nonestimable)
    value = der["ysd"] / der["sd"] - der["ys0"] / der["s0"]
    return PointEstimate(name="unconditional_mte", p=p, value=value)


def liv_naive(sample: Sample, fit: PropensityFit, p: float, config: SmootherConfig,
              bandwidth: Optional[float] = None) -> PointEstimate:
    """∂E[Y|P=p, S=1]/∂p на отобранной подвыборке.

    Не интерпретируется как эффект лечения: смешивает интенсивную и экстенсивную маржу.
    """
    phat, y, s, _ = _kept_arrays(sample, fit)
    selected = s == 1
    if not selected.any():
        raise EstimationError("no selected observations for the naive LIV")
    value = _derivatives(phat[selected], p, {"y": y[selected]}, config, bandwidth)["y"]
    return PointEstimate(name="liv_naive", p=p, value=value)


class NonparametricBoundsService:
    """Пайплайн: пропенсити -> сетка по исходу -> таблицы -> кривые границ по наборам предпосылок."""

    def __init__(self, sample: Sample, propensity: PropensityConfig, smoother: SmootherConfig,
                 n_edges: int = 11, fractional: bool = False, bandwidth: Optional[float] = None):
        self.sample = sample
        self.smoother = smoother
        self.fractional = fractional
        self.fit = fit_logit(sample, propensity)
        selected = (sample.s == 1) & self.fit.kept
        self.grid = OutcomeGrid.from_quantiles(sample.y[selected], n_edges)
        self.bandwidth = bandwidth if bandwidth is not None else table_bandwidth(sample, self.fit, smoother)
        logger.info(f"Nonparametric pipeline: {self.grid.n_bins} outcome bins, bandwidth={self.bandwidth:.4f}")

    def tables(self, p_grid: Iterable[float]) -> List[ConditionalOutcomeTable]:
        return [build_table(self.sample, self.fit, float(p), self.grid, self.smoother, self.bandwidth)
                for p in p_grid]

    def curves(self, p_grid: Iterable[float], tiers: Sequence[AssumptionTier],
               tables: Optional[List[ConditionalOutcomeTable]] = None) -> Dict[AssumptionTier, BoundCurve]:
        if tables is None:
            tables = self.tables(p_grid)
        per_table = [table_bounds(t, tiers, self.fractional) for t in tables]
        return {tier: BoundCurve(tier=tier, points=[points[tier] for points in per_table]) for tier in tiers}

    def margins(self, p_grid: Iterable[float]) -> pd.DataFrame:
        """Экстенсивная маржа, безусловный MTE и наивный LIV по сетке p."""
        rows = []
        for p in p_grid:
            for estimator in (selection_mte, unconditional_mte, liv_naive):
                try:
                    est = estimator(self.sample, self.fit, float(p), self.smoother, self.bandwidth)
                except EstimationError as e:
                    logger.warning(f"{estimator.__name__} at p={p:.3f}: {e}")
                    est = PointEstimate(name=estimator.__name__, p=float(p), value=math.nan,
                                        status=BoundStatus.nonestimable)
                rows.append({"p": est.p, "estimand": est.name, "value": est.value, "status": est.status.value})
        return pd.DataFrame(rows)
