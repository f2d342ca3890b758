"""Реестр пайплайнов: одна подкоманда CLI -> один узел, run() пишет артефакты и манифест."""
import time
from datetime import datetime, timezone
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from loguru import logger
from scipy.integrate import trapezoid

from app.core.config import settings
from app.core.errors import ConfigError, DiagnosticsViolation, MteBoundsError, NumericalError
from app.schemas.aggregate import PolicyPair, WeightCurve, WeightKind, WeightSpec
from app.schemas.bounds import AssumptionTier, BoundCurve
from app.schemas.dgp import DgpConfig, Sample
from app.schemas.discrete import late_frame
from app.schemas.dmte import OutcomeSet, dmte_frame
from app.schemas.estimation import OutcomeGrid
from app.schemas.montecarlo import McConfig
from app.schemas.run import RunConfig, RunManifest
from app.services import oracle
from app.services.aggregate import aggregate_bounds, propensity_density, weight_curve
from app.services.dgp import generate, panel
from app.services.diagnostics import check_binary, check_index_sufficiency, check_inequalities
from app.services.discrete import all_late_bounds, build_ladder
from app.services.dmte import dmte_curve
from app.services.ingestion import IngestionService
from app.services.montecarlo import run_mc
from app.services.npbounds import NonparametricBoundsService
from app.services.parbounds import consistency_gap, fit_parametric, scmte_bounds
from app.services.propensity import fit_logit
from app.services.storage import ArtifactStore

# Значения дискретного инструмента, если выборка генерируется из панели для `discrete`
DISCRETE_SUPPORT = (-1.0, -0.5, 0.0, 0.5, 1.0)

Pipeline = Callable[[RunConfig, ArtifactStore], None]


# --- 1. Источники данных ---

def _model(config: RunConfig) -> DgpConfig:
    return config.dgp if config.dgp is not None else panel(config.panel)


def _sample(config: RunConfig) -> Sample:
    if config.input is not None:
        return IngestionService().load(config.input)
    dgp = _model(config)
    if config.command == "discrete" and dgp.instrument_support is None:
        dgp = dgp.model_copy(update={"instrument_support": DISCRETE_SUPPORT})
    logger.info(f"No --input given, simulating n={config.n} from the model (seed {config.seed})")
    return generate(dgp, config.n, config.seed, config.n_covariates)


def _np_service(config: RunConfig, sample: Sample) -> NonparametricBoundsService:
    return NonparametricBoundsService(sample, config.propensity, config.smoother,
                                      n_edges=config.n_edges, fractional=config.fractional)


def _curves_frame(curves: Dict[AssumptionTier, BoundCurve]) -> pd.DataFrame:
    return pd.concat([curve.to_frame() for curve in curves.values()], ignore_index=True)


# --- 2. Узлы ---

def simulate_node(config: RunConfig, store: ArtifactStore):
    sample = _sample(config)
    store.write_csv("sample.csv", sample.to_frame(with_latent=config.with_latent))


def oracle_node(config: RunConfig, store: ArtifactStore):
    dgp = _model(config)
    store.write_csv("oracle.csv", oracle.oracle_frame(oracle.oracle_curve(dgp, config.p_grid)))

    landmarks = {"frechet_zero_crossing": oracle.frechet_zero_crossing(dgp)}
    for tier in (AssumptionTier.no_restriction, AssumptionTier.monotone):
        try:
            landmarks[f"sign_identified_until[{tier.value}]"] = oracle.sign_identified_until(dgp, tier)
        except NumericalError as e:
            logger.warning(f"No sign-identification landmark under {tier.value}: {e}")
            landmarks[f"sign_identified_until[{tier.value}]"] = None
    store.write_json("landmarks.json", landmarks)


def estimate_np_node(config: RunConfig, store: ArtifactStore):
    sample = _sample(config)
    service = _np_service(config, sample)
    tables = service.tables(config.p_grid)
    curves = service.curves(config.p_grid, config.tiers, tables=tables)
    store.write_csv("bounds.csv", _curves_frame(curves))
    store.write_csv("tables.csv", pd.concat([t.to_frame() for t in tables], ignore_index=True))
    store.write_csv("margins.csv", service.margins(config.p_grid))
    store.write_csv("propensity.csv", service.fit.to_frame())


def estimate_param_node(config: RunConfig, store: ArtifactStore):
    sample = _sample(config)
    fit = fit_parametric(sample, config.covariates, propensity=config.propensity, n_edges=config.n_edges)
    kept = fit.propensity.kept
    covariates = sample.columns(fit.covariate_columns)[kept] if fit.covariate_columns else None
    curves = {tier: scmte_bounds(fit, covariates, config.p_grid, tier, config.fractional) for tier in config.tiers}
    store.write_csv("bounds.csv", _curves_frame(curves))

    # разрыв Σγ̂ − π̂ на средней строке ковариат
    x_mean = covariates.mean(axis=0) if covariates is not None else None
    gaps = [(p, *consistency_gap(fit, p, x_mean)) for p in config.p_grid]
    store.write_csv("consistency.csv", pd.DataFrame(gaps, columns=["p", "gap0", "gap1"]))

    components = [fit.selection[0], fit.selection[1], *fit.bins[0], *fit.bins[1]]
    store.write_csv("components.csv", pd.DataFrame([{
        "component": c.component, "iterations": c.iterations, "log_likelihood": c.log_likelihood,
        **{f"coef_{name}": value for name, value in zip(c.names, c.coefficients)},
    } for c in components]))


def parse_weight(text: str, policy: Optional[PolicyPair]) -> WeightSpec:
    """'ATE' | 'ATT' | 'ATU' | 'PRTE' | 'LATE:0.2:0.8'."""
    head, *params = text.strip().split(":")
    try:
        kind = WeightKind(head.upper())
    except ValueError:
        raise ConfigError(f"Unknown weight '{text}', expected ATE, ATT, ATU, LATE:lo:hi or PRTE")
    if kind == WeightKind.late:
        if len(params) != 2:
            raise ConfigError(f"LATE weight must look like LATE:lo:hi, got '{text}'")
        return WeightSpec(kind=kind, p_lo=float(params[0]), p_hi=float(params[1]))
    if params:
        raise ConfigError(f"weight '{head}' takes no parameters")
    return WeightSpec(kind=kind, policy=policy if kind == WeightKind.prte else None)


def _weight_inputs(config: RunConfig) -> Tuple[np.ndarray, np.ndarray, Dict[AssumptionTier, BoundCurve]]:
    """(π0 на сетке, плотность P(Z) на сетке, кривые границ) из оракула или из выборки."""
    grid = np.asarray(config.p_grid, dtype=float)
    if config.oracle:
        dgp = _model(config)
        pi0 = oracle.selection_probabilities(dgp, grid)[0]
        curves = {tier: oracle.oracle_curve_for_tier(dgp, grid, tier) for tier in config.tiers}
        # P(Z) = Φ(Z) ~ U(0, 1)
        return pi0, np.ones_like(grid), curves
    sample = _sample(config)
    service = _np_service(config, sample)
    tables = service.tables(grid)
    pi0 = np.array([t.pi0 for t in tables])
    density = propensity_density(service.fit.fitted[service.fit.kept], grid)
    return pi0, density, service.curves(grid, config.tiers, tables=tables)


def _weight_curves(config: RunConfig, pi0: np.ndarray, density: np.ndarray) -> List[WeightCurve]:
    policy = None
    if config.policy is not None:
        try:
            policy = PolicyPair.from_frame(pd.read_csv(config.policy))
        except (OSError, KeyError, ValueError) as e:
            raise ConfigError(f"Cannot read policy file {config.policy}: {e}") from e
    specs = [parse_weight(w, policy) for w in config.weights]
    return [weight_curve(spec, pi0, density, config.p_grid) for spec in specs]


def weights_node(config: RunConfig, store: ArtifactStore):
    pi0, density, _ = _weight_inputs(config)
    curves = _weight_curves(config, pi0, density)
    store.write_csv("weights.csv", pd.concat([c.to_frame() for c in curves], ignore_index=True))


def aggregate_node(config: RunConfig, store: ArtifactStore):
    pi0, density, bound_curves = _weight_inputs(config)
    weights = _weight_curves(config, pi0, density)
    store.write_csv("weights.csv", pd.concat([c.to_frame() for c in weights], ignore_index=True))

    grid = np.asarray(config.p_grid, dtype=float)
    mte = np.array([oracle.true_mte(_model(config), p) for p in grid]) if config.oracle else None
    rows = []
    for tier, curve in bound_curves.items():
        for w in weights:
            agg = aggregate_bounds(curve, w)
            row = {"kind": agg.kind, "tier": tier.value, "lower": agg.lower, "upper": agg.upper,
                   "weight_integral": agg.weight_integral, "lost_mass": agg.lost_mass, "status": agg.status.value}
            if mte is not None:
                row["mte_integral"] = float(trapezoid((mte * w.omega)[w.domain], grid[w.domain]))
            rows.append(row)
    store.write_csv("aggregate.csv", pd.DataFrame(rows))


def discrete_node(config: RunConfig, store: ArtifactStore):
    sample = _sample(config)
    ladder = build_ladder(sample, z_column=config.instrument, n_edges=config.n_edges)
    store.write_csv("ladder.csv", pd.DataFrame([{
        "level": i + 1, "z_values": " ".join(f"{z:g}" for z in lvl.z_values), "p": lvl.p, "n": lvl.n,
        "e_sd": lvl.e_sd, "e_s0": lvl.e_s0,
    } for i, lvl in enumerate(ladder.levels)]))
    store.write_csv("late.csv", late_frame(all_late_bounds(ladder, config.fractional)))


def dmte_node(config: RunConfig, store: ArtifactStore):
    try:
        sets = [OutcomeSet.parse(text) for text in config.outcome_sets]
    except ValueError as e:
        raise ConfigError(f"Invalid outcome set: {e}") from e
    sample = _sample(config)
    service = _np_service(config, sample)
    store.write_csv("dmte.csv", dmte_frame(dmte_curve(service.tables(config.p_grid), sets)))


def diagnose_node(config: RunConfig, store: ArtifactStore):
    sample = _sample(config)
    fit = fit_logit(sample, config.propensity)
    selected = (sample.s == 1) & fit.kept
    y_grid = OutcomeGrid.from_quantiles(sample.y[selected], config.n_edges)

    report = check_inequalities(sample, fit, config.p_grid, y_grid, config.smoother, config.tolerance)
    report = report.merge(check_index_sufficiency(sample, fit, permutations=config.permutations, seed=config.seed))
    if sample.frame[sample.z_columns[0]].nunique() == 2:
        binary = check_binary(sample, y_grid)
        report = report.merge(binary.model_copy(update={
            "checks": [c.model_copy(update={"name": f"binary_{c.name}"}) for c in binary.checks]}))

    store.write_csv("diagnostics.csv", report.to_frame())
    summary = report.summary()
    store.write_json("diagnostics.json", summary.to_dict(orient="records"))
    logger.info(f"Diagnostics summary:\n{summary.to_string(index=False)}")
    if report.violated and config.fail_on_violation:
        failed = [c.name for c in report.checks if c.violated]
        logger.error(f"Testable implications violated: {failed}")
        raise DiagnosticsViolation(f"violated checks: {failed}")


def montecarlo_node(config: RunConfig, store: ArtifactStore):
    mc = McConfig(panel=_model(config), n=config.n, reps=config.reps, seed_base=config.seed,
                  p_points=config.p_grid, n_edges=config.n_edges, workers=config.workers,
                  fractional=config.fractional, propensity=config.propensity, smoother=config.smoother)
    report = run_mc(mc)
    store.write_csv("mc_summary.csv", report.to_frame())
    store.write_csv("mc_bias.csv", report.wide("bias").reset_index())
    store.write_csv("mc_mse.csv", report.wide("scaled_mse").reset_index())
    store.write_csv("mc_coverage.csv", report.coverage)
    store.write_json("mc_failures.json", [f.model_dump() for f in report.failures])


PIPELINES: Dict[str, Pipeline] = {
    "simulate": simulate_node,
    "bounds-oracle": oracle_node,
    "estimate-np": estimate_np_node,
    "estimate-param": estimate_param_node,
    "weights": weights_node,
    "aggregate": aggregate_node,
    "discrete": discrete_node,
    "dmte": dmte_node,
    "diagnose": diagnose_node,
    "montecarlo": montecarlo_node,
}


# --- 3. Запуск ---

def run(config: RunConfig) -> RunManifest:
    """Выполняет ровно один пайплайн; манифест пишется и при ошибке (с её exit code)."""
    store = ArtifactStore(config.output_dir)
    started = datetime.now(timezone.utc)
    clock = time.perf_counter()
    exit_code = 0
    logger.info(f"Running '{config.command}' -> {store.root}")
    try:
        PIPELINES[config.command](config, store)
    except MteBoundsError as e:
        exit_code = e.exit_code
        raise
    except ValueError:
        exit_code = ConfigError.exit_code
        raise
    except Exception:
        exit_code = 1
        raise
    finally:
        manifest = RunManifest(
            version=settings.VERSION, command=config.command, seed=config.seed,
            started_at=started.isoformat(), wall_time_s=time.perf_counter() - clock,
            config=config.model_dump(mode="json"), settings=settings.model_dump(mode="json"),
            exit_code=exit_code,
        )
        store.write_manifest(manifest)
    return manifest
