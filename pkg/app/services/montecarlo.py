"""Монте-Карло: смещение и n-масштабированная MSE шести оценок по сетке p."""
import math
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from loguru import logger

from app.core.errors import MteBoundsError
from app.schemas.bounds import AssumptionTier, BoundPoint
from app.schemas.montecarlo import ESTIMANDS, McConfig, McFailure, McReport
from app.services.dgp import generate
from app.services.npbounds import NonparametricBoundsService
from app.services.oracle import true_bounds, true_mte

TIER = AssumptionTier.monotone


def _estimands(point: BoundPoint) -> Dict[str, float]:
    """LB и UB: хвостовые средние Y1; Δ: они же минус Ξ0."""
    return {
        "alpha": point.alpha, "xi0": point.xi0,
        "lb": point.lower + point.xi0, "ub": point.upper + point.xi0,
        "delta_lower": point.lower, "delta_upper": point.upper,
    }


def truths(config: McConfig) -> Dict[Tuple[str, float], float]:
    out = {}
    for p in config.p_points:
        for name, value in _estimands(true_bounds(config.panel, p, TIER)).items():
            out[(name, p)] = value
    return out


def _replicate(config: McConfig, rep: int) -> Tuple[int, Dict[Tuple[str, float], float], str]:
    """Одна репликация; ошибка возвращается строкой, чтобы попасть в журнал отказов."""
    seed = config.seed_base + rep
    try:
        sample = generate(config.panel, config.n, seed)
        service = NonparametricBoundsService(sample, config.propensity, config.smoother,
                                             n_edges=config.n_edges, fractional=config.fractional)
        curve = service.curves(config.p_points, [TIER])[TIER]
    except MteBoundsError as e:
        return rep, {}, f"{type(e).__name__}: {e}"
    values = {}
    for point in curve.points:
        for name, value in _estimands(point).items():
            values[(name, point.p)] = value
    return rep, values, ""


def _run_all(config: McConfig) -> List[Tuple[int, Dict, str]]:
    # n_jobs=1 выполняется в текущем процессе
    results = Parallel(n_jobs=config.workers)(delayed(_replicate)(config, rep) for rep in range(config.reps))
    return sorted(results, key=lambda r: r[0])


def summarize(estimates: np.ndarray, truth: float, n: int) -> Dict[str, float]:
    """bias, sd (ddof=1) и n·mean((θ̂−θ0)²) по конечным оценкам."""
    finite = estimates[np.isfinite(estimates)]
    if finite.size == 0 or not math.isfinite(truth):
        return {"bias": math.nan, "sd": math.nan, "scaled_mse": math.nan}
    errors = finite - truth
    sd = float(np.std(errors, ddof=1)) if finite.size > 1 else 0.0
    return {"bias": float(np.mean(errors)), "sd": sd, "scaled_mse": float(n * np.mean(errors ** 2))}


def run_mc(config: McConfig) -> McReport:
    logger.info(f"Monte Carlo: n={config.n}, reps={config.reps}, seed_base={config.seed_base}, "
                f"workers={config.workers}")
    truth = truths(config)
    results = _run_all(config)

    failures = [McFailure(rep=rep, seed=config.seed_base + rep, error=err) for rep, _, err in results if err]
    for f in failures:
        logger.warning(f"Replication {f.rep} (seed {f.seed}) failed: {f.error}")
    succeeded = [values for _, values, err in results if not err]

    rows = []
    for name in ESTIMANDS:
        for p in config.p_points:
            estimates = np.array([values[(name, p)] for values in succeeded], dtype=float)
            stats = summarize(estimates, truth[(name, p)], config.n)
            missing = config.reps - int(np.isfinite(estimates).sum())
            rows.append({"estimand": name, "p": p, "truth": truth[(name, p)], **stats, "failures": missing})
    table = pd.DataFrame(rows, columns=["estimand", "p", "truth", "bias", "sd", "scaled_mse", "failures"])

    coverage = []
    for p in config.p_points:
        mte = true_mte(config.panel, p)
        lo = np.array([values[("delta_lower", p)] for values in succeeded], dtype=float)
        hi = np.array([values[("delta_upper", p)] for values in succeeded], dtype=float)
        usable = np.isfinite(lo) & np.isfinite(hi)
        covered = (lo[usable] <= mte) & (mte <= hi[usable])
        coverage.append({"p": p, "mte": mte, "coverage": float(covered.mean()) if usable.any() else math.nan,
                         "replications": int(usable.sum())})

    logger.success(f"Monte Carlo finished: {len(succeeded)}/{config.reps} replications, {len(failures)} failed")
    return McReport(n=config.n, reps=config.reps, table=table, coverage=pd.DataFrame(coverage), failures=failures)
