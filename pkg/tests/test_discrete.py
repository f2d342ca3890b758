import math

import numpy as np
import pandas as pd
import pytest

from app.core.errors import AssumptionViolation, ConfigError
from app.schemas.bounds import AssumptionTier, BoundStatus
from app.schemas.dgp import Sample
from app.schemas.discrete import DiscreteLadder, LadderLevel, late_frame
from app.schemas.estimation import OutcomeGrid
from app.services.dgp import PANEL_A
from app.services.discrete import all_late_bounds, build_ladder, late_bounds
from app.services.oracle import oracle_ladder, true_bounds

GRID = OutcomeGrid(edges=[0.0, 1.0, 2.0, 3.0, 4.0])
FLAT = np.full(4, 0.25)


def _level(p, e_sd, e_s0, bins1, bins0):
    return LadderLevel(z_values=[p], p=p, e_sd=e_sd, e_s0=e_s0, bins1=np.asarray(bins1), bins0=np.asarray(bins0))


def _ladder(rise_bins1, drop_bins0, rise=0.2, drop=0.1):
    lo = _level(0.2, 0.125, 0.5, 0.125 * FLAT, 0.5 * FLAT)
    hi = _level(0.4, 0.125 + rise, 0.5 - drop, 0.125 * FLAT + rise * np.asarray(rise_bins1),
                0.5 * FLAT - drop * np.asarray(drop_bins0))
    return DiscreteLadder(levels=[lo, hi], grid=GRID)


def test_half_share_interval():
    bound = late_bounds(_ladder(FLAT, FLAT), 2)
    assert bound.alpha_tilde == pytest.approx(0.5)
    assert (bound.p_lo, bound.p_hi) == (0.2, 0.4)
    assert (bound.lower, bound.upper) == pytest.approx((-1.0, 1.0))
    assert bound.status == BoundStatus.partial


def test_equal_responses_identify_the_late():
    bound = late_bounds(_ladder([0.1, 0.2, 0.3, 0.4], FLAT, rise=0.25, drop=0.25), 2)
    assert bound.alpha_tilde == pytest.approx(1.0)
    assert bound.status == BoundStatus.identified
    assert bound.lower == pytest.approx(bound.upper)
    assert bound.lower == pytest.approx(0.5)


def test_no_untreated_response_loses_the_interval():
    bound = late_bounds(_ladder(FLAT, FLAT, drop=0.0), 2)
    assert bound.status == BoundStatus.lost
    assert bound.alpha_tilde == 0.0
    assert math.isinf(bound.lower) and math.isinf(bound.upper)


def test_wrong_signed_differences_are_flagged():
    bound = late_bounds(_ladder(FLAT, FLAT, rise=-0.05), 2)
    assert bound.status == BoundStatus.nonestimable
    assert "negative difference quotient" in bound.note
    assert math.isnan(bound.lower)
    with pytest.raises(ConfigError):
        late_bounds(_ladder(FLAT, FLAT), 3)


def _toy_sample():
    rows = []
    treated_by_z = {0: 1, 1: 2, 2: 2, 3: 3}
    for z, k in treated_by_z.items():
        for i in range(4):
            rows.append({"y": float(i + z), "s": 1, "d": int(i < k), "z": float(z)})
    return Sample(frame=pd.DataFrame(rows))


def test_levels_with_equal_propensity_are_merged_and_sorted():
    ladder = build_ladder(_toy_sample(), n_edges=4)
    np.testing.assert_allclose(ladder.p, [0.25, 0.5, 0.75])
    assert ladder.levels[1].z_values == [1.0, 2.0]
    assert ladder.levels[1].n == 8
    bounds = all_late_bounds(ladder)
    assert [b.ell for b in bounds] == [2, 3]
    frame = late_frame(bounds)
    assert list(frame.columns) == ["ell", "p_lo", "p_hi", "alpha_tilde", "lower", "upper", "status"]


def test_degenerate_instrument_value():
    frame = _toy_sample().frame
    extra = pd.DataFrame({"y": [1.0, 2.0], "s": [1, 1], "d": [0, 0], "z": [9.0, 9.0]})
    with pytest.raises(AssumptionViolation):
        build_ladder(Sample(frame=pd.concat([frame, extra], ignore_index=True)))
    with pytest.raises(ConfigError):
        build_ladder(_toy_sample(), z_column="z7")


@pytest.mark.slow
def test_population_ladder_approaches_the_continuous_bounds():
    grid = OutcomeGrid(edges=np.linspace(-3.0, 3.0, 61))
    ladder = oracle_ladder(PANEL_A, np.linspace(0.05, 0.95, 64), grid)
    checked = 0
    for bound in all_late_bounds(ladder, fractional=True):
        mid = 0.5 * (bound.p_lo + bound.p_hi)
        if not 0.1 <= mid <= 0.9:
            continue
        truth = true_bounds(PANEL_A, mid, AssumptionTier.monotone)
        assert bound.alpha_tilde == pytest.approx(truth.alpha, abs=0.02)
        assert bound.lower == pytest.approx(truth.lower, abs=0.05)
        assert bound.upper == pytest.approx(truth.upper, abs=0.05)
        checked += 1
    assert checked > 40
