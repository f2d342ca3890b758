"""Проверки тестируемых следствий модели: неравенства на производные, достаточность индекса, бинарный Z."""
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from loguru import logger

from app.core.config import settings
from app.core.errors import ConfigError, EstimationError
from app.schemas.dgp import DgpConfig, Sample
from app.schemas.diagnostics import CheckResult, DiagnosticReport
from app.schemas.estimation import OutcomeGrid, PropensityFit, SmootherConfig
from app.services.dgp import rng_for
from app.services.oracle import selection_derivatives
from app.services.smoother import LocalPolynomial, table_bandwidth

TREATED_CHECK = "treated_density"
UNTREATED_CHECK = "untreated_density"
SELECTION_CHECK = "selection_response"
INDEX_CHECK = "index_sufficiency"

N_PROPENSITY_BINS = 10
MIN_CELL = 20
NULL_QUANTILE = 0.99


def inequality_slacks(values) -> np.ndarray:
    """Знаковое расстояние до ближайшей границы [0, 1]: отрицательно вне отрезка."""
    values = np.asarray(values, dtype=float)
    return np.minimum(values, 1.0 - values)


def _derivative_checks(points: List[float], treated: List[np.ndarray], untreated: List[np.ndarray],
                       selection: List[float], tolerance: float, excluded: int) -> DiagnosticReport:
    """По каждой точке берём минимум запаса по кумулятивным множествам (−∞, y_k]."""
    note = f"{excluded} grid points not estimable" if excluded else None
    common = dict(points=points, tolerance=tolerance, excluded=excluded, note=note)
    return DiagnosticReport(checks=[
        CheckResult(name=TREATED_CHECK, slacks=[float(inequality_slacks(v).min()) for v in treated], **common),
        CheckResult(name=UNTREATED_CHECK, slacks=[float(inequality_slacks(v).min()) for v in untreated], **common),
        CheckResult(name=SELECTION_CHECK, slacks=[float(inequality_slacks(v)) for v in selection], **common),
    ])


def check_inequalities(sample: Sample, fit: PropensityFit, p_grid: Sequence[float], y_grid: OutcomeGrid,
                       config: SmootherConfig, tolerance: Optional[float] = None,
                       bandwidth: Optional[float] = None) -> DiagnosticReport:
    tolerance = settings.DIAG_TOLERANCE if tolerance is None else tolerance
    kept = fit.kept
    phat = fit.fitted[kept]
    y, s, d = sample.y[kept], sample.s[kept], sample.d[kept]
    h = bandwidth if bandwidth is not None else table_bandwidth(sample, fit, config)

    cumulative = np.cumsum(y_grid.indicators(y), axis=1)
    treated_sets = cumulative * (s * d)[:, None]
    untreated_sets = cumulative * (s * (1.0 - d))[:, None]

    points, treated, untreated, selection = [], [], [], []
    excluded = 0
    for p in p_grid:
        try:
            lp = LocalPolynomial(phat, float(p), h, config)
        except EstimationError as e:
            logger.warning(f"Diagnostics skip p={float(p):.3f}: {e}")
            excluded += 1
            continue
        points.append(float(p))
        treated.append(lp.derivative(treated_sets, sign=1))
        untreated.append(lp.derivative(untreated_sets, sign=-1))
        selection.append(float(lp.derivative(s, sign=1)))
    report = _derivative_checks(points, treated, untreated, selection, tolerance, excluded)
    _log_report(report)
    return report


def check_oracle_inequalities(config: DgpConfig, p_grid: Sequence[float], y_edges: Sequence[float],
                              tolerance: float = 0.0) -> DiagnosticReport:
    """Те же неравенства на точных производных модели."""
    points, treated, untreated, selection = [], [], [], []
    for p in p_grid:
        exact = selection_derivatives(config, float(p), np.asarray(y_edges, dtype=float))
        points.append(float(p))
        treated.append(exact["treated"])
        untreated.append(exact["untreated"])
        selection.append(float(exact["selection"]))
    return _derivative_checks(points, treated, untreated, selection, tolerance, 0)


def _events(sample: Sample, y_grid: OutcomeGrid) -> np.ndarray:
    """Колонки: {Y<y_k, S=1, D=d} по кумулятивным множествам и {S=0, D=d}."""
    y, s, d = sample.y, sample.s, sample.d
    cumulative = np.cumsum(y_grid.indicators(y), axis=1)[:, :-1]
    return np.column_stack([
        cumulative * (s * d)[:, None], s * d,
        cumulative * (s * (1.0 - d))[:, None], s * (1.0 - d),
        (1.0 - s) * d, (1.0 - s) * (1.0 - d),
    ])


def _residualize(events: np.ndarray, phat: np.ndarray) -> np.ndarray:
    design = np.column_stack([np.ones_like(phat), phat - phat.mean()])
    coef, *_ = np.linalg.lstsq(design, events, rcond=None)
    return events - design @ coef


def _max_t(resid_bins: List[np.ndarray], splits: List[np.ndarray]) -> float:
    """Максимум по бинам и событиям |разность средних остатков| / стандартная ошибка."""
    best = 0.0
    for r, upper in zip(resid_bins, splits):
        a, b = r[upper], r[~upper]
        se = np.sqrt(a.var(axis=0, ddof=1) / len(a) + b.var(axis=0, ddof=1) / len(b))
        diff = np.abs(a.mean(axis=0) - b.mean(axis=0))
        stat = np.divide(diff, se, out=np.zeros_like(diff), where=se > 0)
        best = max(best, float(stat.max()))
    return best


def check_index_sufficiency(sample: Sample, fit: PropensityFit, y_grid: Optional[OutcomeGrid] = None,
                            permutations: Optional[int] = None, seed: int = 0) -> DiagnosticReport:
    """Внутри децилей P̂ разбиваем наблюдения по медиане последнего инструмента и сравниваем
    средние остатков событий после локальной регрессии на P̂ с перестановочным распределением.

    Запас = квантиль перестановочного максимума − наблюдаемый максимум; это отчёт, а не тест.
    """
    permutations = settings.DIAG_PERMUTATIONS if permutations is None else permutations
    z_column = sample.z_columns[-1]
    kept = fit.kept
    if y_grid is None:
        y_grid = OutcomeGrid.from_quantiles(sample.y[(sample.s == 1) & kept], 5)
    phat = fit.fitted[kept]
    z = sample.frame[z_column].to_numpy()[kept]
    events = _events(sample, y_grid)[kept]

    resid_bins, splits, skipped = [], [], 0
    bins = np.zeros(len(phat), dtype=int)
    if np.unique(phat).size > 1:
        bins = pd.qcut(phat, N_PROPENSITY_BINS, labels=False, duplicates="drop")
    for b in np.unique(bins):
        in_bin = bins == b
        zb = z[in_bin]
        upper = zb > np.median(zb)
        if np.unique(zb).size < 2 or upper.sum() < MIN_CELL or (~upper).sum() < MIN_CELL:
            skipped += 1
            continue
        resid_bins.append(_residualize(events[in_bin], phat[in_bin]))
        splits.append(upper)

    if not resid_bins:
        note = f"too few distinct values of '{z_column}' within propensity bins; check skipped"
        logger.warning(f"Index sufficiency: {note}")
        return DiagnosticReport(checks=[CheckResult(name=INDEX_CHECK, excluded=skipped, note=note)])

    observed = _max_t(resid_bins, splits)
    rng = rng_for(seed)
    null = np.array([_max_t(resid_bins, [rng.permutation(u) for u in splits]) for _ in range(permutations)])
    threshold = float(np.quantile(null, NULL_QUANTILE))
    note = f"observed max t={observed:.3f}, permutation q{NULL_QUANTILE:.2f}={threshold:.3f}"
    if skipped:
        note += f", {skipped} bins skipped"
    logger.info(f"Index sufficiency on '{z_column}': {note}")
    return DiagnosticReport(checks=[CheckResult(name=INDEX_CHECK, points=[float(len(resid_bins))],
                                                slacks=[threshold - observed], excluded=skipped, note=note)])


def _binary_levels(sample: Sample) -> Dict[str, np.ndarray]:
    z = sample.frame[sample.z_columns[0]].to_numpy()
    values = np.unique(z)
    if values.size != 2:
        raise ConfigError(f"binary check needs a two-valued instrument, got {values.size} values")
    return {"hi": z == values[1], "lo": z == values[0]}


def _ratio(event: np.ndarray, cells: Dict[str, np.ndarray], gap: float, sign: float):
    hi, lo = event[cells["hi"]], event[cells["lo"]]
    value = sign * (hi.mean(axis=0) - lo.mean(axis=0)) / gap
    se = np.sqrt(hi.var(axis=0, ddof=1) / len(hi) + lo.var(axis=0, ddof=1) / len(lo)) / abs(gap)
    return np.atleast_1d(value), np.atleast_1d(se)


def check_binary(sample: Sample, y_grid: Optional[OutcomeGrid] = None, n_edges: int = 11) -> DiagnosticReport:
    """Отношения разностей клеточных средних к P(1) − P(0); допуск 0, рядом стандартные ошибки."""
    cells = _binary_levels(sample)
    y, s, d = sample.y, sample.s, sample.d
    gap = float(d[cells["hi"]].mean() - d[cells["lo"]].mean())
    names = (TREATED_CHECK, UNTREATED_CHECK, SELECTION_CHECK)
    if np.isclose(gap, 0.0, atol=1e-12):
        note = "undefined: P(1) = P(0)"
        logger.warning(f"Binary check {note}")
        return DiagnosticReport(checks=[CheckResult(name=name, note=note) for name in names])

    if y_grid is None:
        y_grid = OutcomeGrid.from_quantiles(y[s == 1], n_edges)
    cumulative = np.cumsum(y_grid.indicators(y), axis=1)
    edges = y_grid.edges[1:].tolist()

    checks = []
    for name, event, sign, points in (
        (TREATED_CHECK, cumulative * (s * d)[:, None], 1.0, edges),
        (UNTREATED_CHECK, cumulative * (s * (1.0 - d))[:, None], -1.0, edges),
        (SELECTION_CHECK, s, 1.0, [0.0]),
    ):
        value, se = _ratio(event, cells, gap, sign)
        checks.append(CheckResult(name=name, points=points, slacks=inequality_slacks(value).tolist(),
                                  std_errors=se.tolist()))
    report = DiagnosticReport(checks=checks)
    _log_report(report)
    return report


def _log_report(report: DiagnosticReport):
    for c in report.checks:
        if c.violated:
            logger.warning(f"Check '{c.name}' violated: min slack {c.min_slack:.4f} < -{c.tolerance}")
        else:
            logger.info(f"Check '{c.name}': min slack {c.min_slack:.4f}")
