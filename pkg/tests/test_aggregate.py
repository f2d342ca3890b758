import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from app.core.errors import ConfigError, ZeroWeightError
from app.schemas.aggregate import PolicyPair, WeightKind, WeightSpec
from app.schemas.bounds import AssumptionTier, BoundCurve, BoundPoint, BoundStatus
from app.services.aggregate import aggregate_bounds, propensity_density, weight_curve
from app.services.dgp import PANEL_A
from app.services.oracle import oracle_curve_for_tier, selection_probabilities, true_mte

FINE = np.linspace(0.0, 1.0, 2001)


def _flat_curve(grid, lower, upper):
    points = [BoundPoint(p=float(p), tier=AssumptionTier.monotone, lower=lower, upper=upper,
                         status=BoundStatus.partial) for p in grid]
    return BoundCurve(tier=AssumptionTier.monotone, points=points)


def test_treated_weight_under_constant_selection_and_uniform_propensity():
    curve = weight_curve(WeightSpec(kind=WeightKind.att), 0.7, 1.0, FINE)
    np.testing.assert_allclose(curve.omega, 2.0 * (1.0 - FINE), atol=1e-6)
    assert curve.integral == pytest.approx(1.0)

    untreated = weight_curve(WeightSpec(kind=WeightKind.atu), 0.7, 1.0, FINE)
    np.testing.assert_allclose(untreated.omega, 2.0 * FINE, atol=1e-6)

    ate = weight_curve(WeightSpec(kind=WeightKind.ate), lambda p: 0.5 + 0.0 * p, 1.0, FINE)
    np.testing.assert_allclose(ate.omega, 1.0)
    assert ate.normalizer == pytest.approx(0.5)


def test_late_interval_snaps_to_the_grid():
    grid = np.linspace(0.0, 1.0, 11)
    curve = weight_curve(WeightSpec(kind=WeightKind.late, p_lo=0.25, p_hi=0.75), 1.0, 1.0, grid)
    assert grid[curve.domain].tolist() == pytest.approx([0.3, 0.4, 0.5, 0.6, 0.7])
    np.testing.assert_allclose(curve.omega[curve.domain], 1.0 / 0.4)
    assert (curve.omega[~curve.domain] == 0).all()
    assert curve.label == "LATE[0.25,0.75]"


def test_late_needs_an_ordered_interval():
    with pytest.raises(ValueError):
        WeightSpec(kind=WeightKind.late, p_lo=0.6, p_hi=0.4)


def _policy(shift_at):
    p = np.linspace(0.0, 1.0, 101)
    return PolicyPair(p=p, cdf_a=p, cdf_a_prime=np.clip(2.0 * p - shift_at, 0.0, 1.0))


def test_signed_policy_weights_take_the_opposite_endpoint():
    grid = np.linspace(0.0, 1.0, 1001)
    weight = weight_curve(WeightSpec(kind=WeightKind.prte, policy=_policy(0.4)), 1.0, 1.0, grid)
    assert weight.normalizer == pytest.approx(0.05, abs=1e-6)
    assert weight.omega.min() < 0 < weight.omega.max()
    result = aggregate_bounds(_flat_curve(grid, -1.0, 2.0), weight)
    # положительная часть весов 1.8, отрицательная −0.8
    assert result.lower == pytest.approx(-3.4, abs=1e-4)
    assert result.upper == pytest.approx(4.4, abs=1e-4)
    assert result.weight_integral == pytest.approx(1.0)


def test_policy_with_zero_net_shift_is_undefined():
    grid = np.linspace(0.0, 1.0, 1001)
    with pytest.raises(ZeroWeightError):
        weight_curve(WeightSpec(kind=WeightKind.prte, policy=_policy(0.5)), 1.0, 1.0, grid)


def test_aggregated_oracle_bounds_contain_the_weighted_effect():
    grid = np.linspace(0.01, 0.99, 99)
    def pi0(p):
        return selection_probabilities(PANEL_A, p)[0]

    curve = oracle_curve_for_tier(PANEL_A, grid, AssumptionTier.monotone)
    mte = np.array([true_mte(PANEL_A, p) for p in grid])
    for kind in (WeightKind.ate, WeightKind.att, WeightKind.atu):
        weight = weight_curve(WeightSpec(kind=kind), pi0, 1.0, grid)
        result = aggregate_bounds(curve, weight)
        target = trapezoid(mte * weight.omega, grid)
        assert result.lower - 1e-9 <= target <= result.upper + 1e-9
        assert result.status == BoundStatus.partial


def test_lost_points_make_the_aggregate_lost():
    grid = np.linspace(0.0, 1.0, 11)
    points = [BoundPoint(p=float(p), tier=AssumptionTier.monotone, lower=-math.inf if p > 0.85 else 0.0,
                         upper=math.inf if p > 0.85 else 1.0, status=BoundStatus.partial) for p in grid]
    weight = weight_curve(WeightSpec(kind=WeightKind.ate), 1.0, 1.0, grid)
    result = aggregate_bounds(BoundCurve(tier=AssumptionTier.monotone, points=points), weight)
    assert result.status == BoundStatus.lost
    assert result.lost_mass > 0


def test_curves_on_different_grids_are_rejected():
    weight = weight_curve(WeightSpec(kind=WeightKind.ate), 1.0, 1.0, np.linspace(0, 1, 11))
    with pytest.raises(ConfigError):
        aggregate_bounds(_flat_curve(np.linspace(0, 1, 21), 0.0, 1.0), weight)


def test_propensity_density_warns_on_short_support():
    rng = np.random.default_rng(0)
    density = propensity_density(rng.uniform(0.3, 0.7, size=2_000), np.linspace(0, 1, 51))
    assert density.shape == (51,)
    assert density[25] > density[0]


def test_average_effect_splits_into_treated_and_untreated_parts():
    grid = np.linspace(0.01, 0.99, 99)
    pi0 = selection_probabilities(PANEL_A, grid)[0]
    density = 1.0 + 0.5 * np.sin(3.0 * grid)
    curves = {kind: weight_curve(WeightSpec(kind=kind), pi0, density, grid)
              for kind in (WeightKind.ate, WeightKind.att, WeightKind.atu)}
    ate, att, atu = curves[WeightKind.ate], curves[WeightKind.att], curves[WeightKind.atu]
    assert att.normalizer + atu.normalizer == pytest.approx(ate.normalizer)
    recombined = (att.normalizer * att.omega + atu.normalizer * atu.omega) / ate.normalizer
    np.testing.assert_allclose(recombined, ate.omega, atol=1e-10)
