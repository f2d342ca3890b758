"""Разбор командной строки: один sub-parser на подкоманду, флаги -> RunConfig."""
import argparse
from typing import List, Optional, Union

import numpy as np

from app.core.config import Settings
from app.core.errors import ConfigError
from app.schemas.bounds import AssumptionTier
from app.schemas.dgp import DgpConfig
from app.schemas.estimation import PropensityConfig, SmootherConfig
from app.schemas.run import RunConfig
from app.services.dgp import panel

DGP_FLAGS = ("delta0", "delta1", "beta00", "beta01", "beta10", "beta11")
TIERS = [t.value for t in AssumptionTier]
KERNELS = ["epanechnikov", "triangular", "uniform", "gaussian"]


def parse_grid(text: str) -> List[float]:
    """'a:b:n' -> n равноотстоящих точек от a до b; иначе список через запятую."""
    try:
        if ":" in text:
            lo, hi, count = text.split(":")
            n = int(count)
            if n < 1:
                raise ValueError("count must be positive")
            return [float(v) for v in np.linspace(float(lo), float(hi), n)]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"bad grid '{text}': expected a:b:n or a comma list ({e})")


def parse_bandwidth(text: str) -> Union[float, str]:
    if text in ("fan-gijbels", "silverman"):
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("bandwidth must be a positive number, 'fan-gijbels' or 'silverman'")


def _columns(text: Optional[str]) -> Optional[List[str]]:
    if text is None:
        return None
    return [c.strip() for c in text.split(",") if c.strip()]


# --- 1. Группы флагов ---

def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat KEY=VALUE settings file (MTE_* keys)")
    p.add_argument("-o", "--output", help="output directory for artifacts")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--log-level", help="stderr log level (DEBUG, INFO, ...)")


def _add_model(p: argparse.ArgumentParser, sample: bool = True):
    p.add_argument("--panel", choices=["A", "B", "C"], help="named DGP parameter panel")
    for name in DGP_FLAGS:
        p.add_argument(f"--{name}", type=float, help=f"DGP parameter {name}")
    p.add_argument("--noise-sd", type=float, help="outcome noise standard deviation (default 1)")
    p.add_argument("--instrument-dims", type=int, help="number of instruments drawn")
    p.add_argument("--direct-effect", type=float, help="direct effect of z2 on outcomes")
    p.add_argument("--instrument-support", type=parse_grid, help="finite instrument support, comma list")
    p.add_argument("--n", type=int, help="sample size to simulate")
    if sample:
        p.add_argument("--input", help="sample CSV with columns y,s,d,z[,x1..xq]")
        p.add_argument("--n-covariates", type=int, default=0, help="exogenous covariates to simulate")


def _add_estimation(p: argparse.ArgumentParser, tiers: bool = True):
    p.add_argument("--p-grid", "--p", dest="p_grid", type=parse_grid, help="evaluation grid, a:b:n or list")
    if tiers:
        p.add_argument("--tier", action="append", choices=TIERS, help="assumption tier (repeatable)")
    p.add_argument("--grid-edges", type=int, help="number of outcome-grid edges (sample quantiles)")
    p.add_argument("--fractional-trim", action="store_true", help="proportional boundary-bin trimming")
    p.add_argument("--lambda-trim", type=float, help="propensity clamp to [λ, 1−λ]")
    p.add_argument("--support-trim", type=float, help="quantile trimmed off each overlap tail")
    p.add_argument("--propensity-columns", help="comma list of propensity regressors ('' = intercept only)")
    p.add_argument("--kernel", choices=KERNELS)
    p.add_argument("--bandwidth", type=parse_bandwidth, help="number, 'fan-gijbels' or 'silverman'")
    p.add_argument("--bandwidth-scale", type=float, help="multiplier applied to the bandwidth")
    p.add_argument("--degree", type=int, choices=[1, 2], help="local polynomial degree")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mte-bounds", allow_abbrev=False,
                                     description="Sharp bounds on the MTE of the always-observed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a sample from the selection model", allow_abbrev=False)
    _add_common(p)
    _add_model(p, sample=False)
    p.add_argument("--n-covariates", type=int, default=0)
    p.add_argument("--with-latent", action="store_true", help="also write the latent truth columns")

    p = sub.add_parser("bounds-oracle", help="population bounds from the closed forms", allow_abbrev=False)
    _add_common(p)
    _add_model(p, sample=False)
    p.add_argument("--p-grid", "--p", dest="p_grid", type=parse_grid)

    p = sub.add_parser("estimate-np", help="nonparametric bound estimates", allow_abbrev=False)
    _add_common(p)
    _add_model(p)
    _add_estimation(p)

    p = sub.add_parser("estimate-param", help="parametric (logit-index) SCMTE bounds", allow_abbrev=False)
    _add_common(p)
    _add_model(p)
    _add_estimation(p)
    p.add_argument("--covariates", help="comma list of covariate columns (default: all x*)")

    for name, help_text in (("weights", "tabulate aggregation weights"),
                            ("aggregate", "aggregate MTE bounds to ATE/ATT/ATU/LATE/PRTE")):
        p = sub.add_parser(name, help=help_text, allow_abbrev=False)
        _add_common(p)
        _add_model(p)
        _add_estimation(p)
        p.add_argument("--weight", action="append", help="ATE, ATT, ATU, PRTE or LATE:lo:hi (repeatable)")
        p.add_argument("--policy", help="CSV p,cdf_a,cdf_a_prime for PRTE")
        p.add_argument("--oracle", action="store_true", help="use population curves of the panel")

    p = sub.add_parser("discrete", help="LATE bounds with a multi-valued discrete instrument", allow_abbrev=False)
    _add_common(p)
    _add_model(p)
    _add_estimation(p)
    p.add_argument("--instrument", help="instrument column (default: first z column)")

    p = sub.add_parser("dmte", help="distributional MTE bounds for outcome-bin sets", allow_abbrev=False)
    _add_common(p)
    _add_model(p)
    _add_estimation(p)
    p.add_argument("--set", dest="sets", action="append", help="bin ranges such as 1-3,7-9 (repeatable)")

    p = sub.add_parser("diagnose", help="check the testable implications of the model", allow_abbrev=False)
    _add_common(p)
    _add_model(p)
    _add_estimation(p, tiers=False)
    p.add_argument("--tolerance", type=float, help="slack tolerance on derivative checks")
    p.add_argument("--permutations", type=int, help="permutations for the index-sufficiency check")
    p.add_argument("--fail-on-violation", action="store_true", help="exit with code 4 on any violation")

    p = sub.add_parser("montecarlo", help="bias and scaled MSE over replications", allow_abbrev=False)
    _add_common(p)
    _add_model(p, sample=False)
    _add_estimation(p, tiers=False)
    p.add_argument("--reps", type=int)
    p.add_argument("--workers", type=int)
    return parser


# --- 2. Флаги -> RunConfig ---

def _dgp(args) -> Optional[DgpConfig]:
    given = {name: getattr(args, name) for name in DGP_FLAGS if getattr(args, name) is not None}
    extras = {
        "outcome_noise_sd": args.noise_sd, "instrument_dims": args.instrument_dims,
        "direct_effect": args.direct_effect,
        "instrument_support": tuple(args.instrument_support) if args.instrument_support else None,
    }
    extras = {k: v for k, v in extras.items() if v is not None}
    if not given:
        if not extras:
            return None
        if args.panel is None:
            raise ConfigError("DGP options need --panel or all of " + ", ".join(f"--{f}" for f in DGP_FLAGS))
        return DgpConfig(**{**panel(args.panel).model_dump(), **extras})
    missing = [f"--{name}" for name in DGP_FLAGS if name not in given]
    if missing:
        raise ConfigError(f"explicit DGP needs all structural parameters; missing {missing}")
    return DgpConfig(**given, **extras)


def _smoother(args, settings: Settings) -> SmootherConfig:
    bandwidth = getattr(args, "bandwidth", None)
    if bandwidth is None:
        bandwidth = parse_bandwidth(settings.BANDWIDTH_RULE)
    scale = getattr(args, "bandwidth_scale", None)
    return SmootherConfig(
        kernel=getattr(args, "kernel", None) or settings.KERNEL, bandwidth=bandwidth,
        bandwidth_scale=settings.BANDWIDTH_SCALE if scale is None else scale,
        degree=getattr(args, "degree", None) or 2,
    )


def _propensity(args, settings: Settings) -> PropensityConfig:
    lam = getattr(args, "lambda_trim", None)
    trim = getattr(args, "support_trim", None)
    return PropensityConfig(
        lambda_trim=settings.LAMBDA_TRIM if lam is None else lam,
        support_trim_pct=settings.SUPPORT_TRIM_PCT if trim is None else trim,
        columns=_columns(getattr(args, "propensity_columns", None)),
        max_iter=settings.MAX_NEWTON_ITER,
        separation_index=settings.SEPARATION_INDEX,
    )


def config_from_args(args: argparse.Namespace, settings: Settings) -> RunConfig:
    """Приоритет: флаг > файл --config > окружение/.env > значения по умолчанию."""
    dgp = _dgp(args)
    fields = dict(
        command=args.command,
        output_dir=args.output or settings.OUTPUT_DIR,
        seed=settings.SEED if args.seed is None else args.seed,
        input=getattr(args, "input", None),
        panel=None if dgp is not None else args.panel,
        dgp=dgp,
        n=args.n or (settings.MC_N if args.command == "montecarlo" else 10_000),
        n_covariates=getattr(args, "n_covariates", 0),
        with_latent=getattr(args, "with_latent", False),
        fractional=getattr(args, "fractional_trim", False),
        propensity=_propensity(args, settings),
        smoother=_smoother(args, settings),
        covariates=_columns(getattr(args, "covariates", None)),
        policy=getattr(args, "policy", None),
        oracle=getattr(args, "oracle", False),
        instrument=getattr(args, "instrument", None),
        outcome_sets=getattr(args, "sets", None) or [],
        tolerance=getattr(args, "tolerance", None),
        permutations=getattr(args, "permutations", None) or settings.DIAG_PERMUTATIONS,
        fail_on_violation=getattr(args, "fail_on_violation", False),
        reps=getattr(args, "reps", None) or settings.MC_REPS,
        workers=getattr(args, "workers", None) or settings.MC_WORKERS,
    )
    if fields["tolerance"] is None and args.command == "diagnose":
        fields["tolerance"] = settings.DIAG_TOLERANCE
    edges = getattr(args, "grid_edges", None)
    fields["n_edges"] = edges or (settings.PARAM_GRID_EDGES if args.command == "estimate-param"
                                  else settings.GRID_EDGES)
    if getattr(args, "p_grid", None):
        fields["p_grid"] = args.p_grid
    if getattr(args, "tier", None):
        fields["tiers"] = [AssumptionTier(t) for t in args.tier]
    if getattr(args, "weight", None):
        fields["weights"] = args.weight
    return RunConfig(**fields)
