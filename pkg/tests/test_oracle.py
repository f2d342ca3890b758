import math

import numpy as np
import pytest

from app.core.errors import ConfigError
from app.schemas.bounds import AssumptionTier, BoundStatus
from app.services.dgp import ILLUSTRATION, PANEL_A, PANEL_B
from app.services.oracle import (ORACLE_COLUMNS, OutcomeMixture, closed_forms, frechet_interval,
                                 frechet_zero_crossing, liv_estimand, monte_carlo_closed_forms, oracle_curve,
                                 oracle_frame, sign_identified_until, true_bounds, true_mte)
from app.schemas.dgp import DgpConfig

P_POINTS = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]

# значения опубликованы с округлением до сотых
TRUTH = {
    "A": {
        "alpha": [.99, .97, .94, .91, .86, .79, .71, .59, .42],
        "lb": [-.09, -.11, -.15, -.2, -.27, -.35, -.46, -.62, -.88],
        "ub": [-.04, .03, .10, .17, .26, .37, .51, .70, 1.00],
    },
    "B": {
        "alpha": [.94, .87, .79, .7, .61, .51, .41, .29, .16],
        "lb": [-.19, -.29, -.39, -.5, -.63, -.77, -.93, -1.14, -1.47],
        "ub": [.06, .2, .34, .48, .63, .79, .98, 1.23, 1.60],
    },
}
MTE_ROW = [-.06, -.04, -.03, -.01, 0, .01, .03, .04, .06]


@pytest.mark.parametrize("name,config", [("A", PANEL_A), ("B", PANEL_B)])
def test_monotone_bounds_match_reference_table(name, config):
    expected = TRUTH[name]
    for i, p in enumerate(P_POINTS):
        point = true_bounds(config, p, AssumptionTier.monotone)
        assert point.alpha == pytest.approx(expected["alpha"][i], abs=0.006)
        assert point.lower == pytest.approx(expected["lb"][i], abs=0.011)
        assert point.upper == pytest.approx(expected["ub"][i], abs=0.011)
        assert point.xi0 == pytest.approx(0.0, abs=1e-12)
        assert true_mte(config, p) == pytest.approx(MTE_ROW[i], abs=0.006)


def test_hand_computed_shares():
    assert closed_forms(PANEL_A, 0.5).alpha == pytest.approx(0.8562, abs=1e-3)
    assert closed_forms(PANEL_A, 0.9).alpha == pytest.approx(0.4248, abs=1e-3)
    assert closed_forms(PANEL_B, 0.9).alpha == pytest.approx(0.1644, abs=1e-3)


@pytest.mark.slow
@pytest.mark.parametrize("p", [0.1, 0.5, 0.9])
def test_closed_forms_agree_with_simulation(p):
    cf = closed_forms(PANEL_A, p)
    check = monte_carlo_closed_forms(PANEL_A, p, draws=1_000_000, seed=7)
    assert check.draws == 1_000_000
    assert abs(check.m0 - cf.m0) < 3 * check.m0_se + 1e-9
    assert abs(check.m1 - cf.m1) < 3 * check.m1_se + 1e-9
    assert abs(check.alpha - cf.alpha) < 3 * check.alpha_se + 1e-9
    assert abs(check.xi0 - cf.xi0) < 3 * check.xi0_se


def test_frechet_landmarks_on_illustration():
    assert frechet_zero_crossing(ILLUSTRATION) == pytest.approx(0.664, abs=0.01)
    assert sign_identified_until(ILLUSTRATION, AssumptionTier.no_restriction) == pytest.approx(0.28, abs=0.02)
    assert sign_identified_until(ILLUSTRATION, AssumptionTier.monotone) == pytest.approx(0.409, abs=0.02)


def test_no_restriction_is_lost_past_the_frechet_crossing():
    crossing = frechet_zero_crossing(ILLUSTRATION)
    point = true_bounds(ILLUSTRATION, min(crossing + 0.05, 0.99), AssumptionTier.no_restriction)
    assert point.status == BoundStatus.lost
    assert math.isinf(point.lower) and math.isinf(point.upper)


def _random_configs(count, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        yield DgpConfig(
            delta0=rng.uniform(-0.5, 1.0), delta1=rng.uniform(0.0, 2.0),
            beta00=rng.uniform(0, 1), beta01=rng.uniform(0, 1), beta10=rng.uniform(0, 1), beta11=rng.uniform(0, 1),
        )


FINE_GRID = np.linspace(0.01, 0.99, 99)
NESTING_CONFIGS = [PANEL_A, PANEL_B, *_random_configs(20)]


@pytest.mark.slow
@pytest.mark.parametrize("config", NESTING_CONFIGS)
def test_tiers_are_nested_and_cover_the_truth(config):
    for p in FINE_GRID:
        mte = true_mte(config, p)
        wide = true_bounds(config, p, AssumptionTier.no_restriction)
        mono = true_bounds(config, p, AssumptionTier.monotone)
        dominance = true_bounds(config, p, AssumptionTier.monotone_dominance)
        assert wide.lower <= mono.lower + 1e-8
        assert mono.upper <= wide.upper + 1e-8
        assert mono.lower <= dominance.lower + 1e-8
        assert dominance.upper == pytest.approx(mono.upper)
        assert mono.lower - 1e-8 <= mte <= mono.upper + 1e-8
        assert wide.lower - 1e-8 <= mte <= wide.upper + 1e-8


def test_no_selection_response_collapses_to_the_mte():
    config = PANEL_A.model_copy(update={"delta1": 0.0})
    for p in (0.2, 0.5, 0.8):
        point = true_bounds(config, p, AssumptionTier.monotone)
        assert point.status == BoundStatus.identified
        assert point.lower == pytest.approx(point.upper, abs=1e-8)
        assert point.lower == pytest.approx(true_mte(config, p), abs=1e-8)
        assert liv_estimand(config, p) == pytest.approx(true_mte(config, p), abs=1e-6)


def test_partial_moment_quadrature_matches_formula():
    mixture = OutcomeMixture(0.3, -0.2, 1.0)
    for lo, hi in ((-np.inf, 0.0), (-1.0, 0.5), (0.2, np.inf), (-np.inf, np.inf)):
        assert mixture.partial_moment(lo, hi) == pytest.approx(mixture.partial_moment_exact(lo, hi), abs=1e-7)
    assert mixture.tail_mean(1.0, "lower") == pytest.approx(mixture.mean)
    assert mixture.cdf(mixture.ppf(0.3)) == pytest.approx(0.3, abs=1e-10)


def test_zero_noise_is_rejected():
    with pytest.raises(ConfigError):
        closed_forms(PANEL_A.model_copy(update={"outcome_noise_sd": 0.0}), 0.5)


def test_frechet_interval():
    interval = frechet_interval(0.7, 0.9)
    assert interval.lower == pytest.approx(0.6)
    assert interval.upper == pytest.approx(0.7)
    assert frechet_interval(0.3, 0.4).lower == 0.0
    with pytest.raises(ConfigError):
        frechet_interval(1.2, 0.5)


def test_points_outside_the_open_unit_interval_are_rejected():
    with pytest.raises(ConfigError):
        true_bounds(PANEL_A, 0.0, AssumptionTier.monotone)


def test_oracle_frame_layout():
    grid = np.round(np.linspace(0.01, 0.99, 99), 2)
    frame = oracle_frame(oracle_curve(PANEL_A, grid))
    assert list(frame.columns) == ORACLE_COLUMNS
    assert len(frame) == 99
    assert (frame["lb2"] <= frame["ub2"]).all()
