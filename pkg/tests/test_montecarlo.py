import math

import numpy as np
import pandas as pd
import pytest

from app.core.errors import EstimationError
from app.schemas.montecarlo import ESTIMANDS, McConfig
from app.services import montecarlo
from app.services.dgp import PANEL_A
from app.services.montecarlo import run_mc, summarize, truths


def test_scaled_mse_decomposes_into_bias_and_variance():
    estimates = np.array([0.9, 1.1, 1.3, 0.7, 1.2])
    stats = summarize(estimates, 1.0, n=400)
    m = len(estimates)
    expected = stats["bias"] ** 2 + stats["sd"] ** 2 * (m - 1) / m
    assert stats["scaled_mse"] / 400 == pytest.approx(expected)
    assert stats["bias"] == pytest.approx(0.04)


def test_summary_ignores_non_finite_estimates():
    stats = summarize(np.array([1.0, math.inf, np.nan, 3.0]), 2.0, n=10)
    assert stats["bias"] == pytest.approx(0.0)
    assert math.isnan(summarize(np.array([np.nan]), 0.0, n=10)["bias"])
    assert summarize(np.array([2.5]), 2.0, n=10)["sd"] == 0.0


def test_truths_follow_the_population_bounds():
    truth = truths(McConfig(panel=PANEL_A, p_points=[0.5]))
    assert truth[("alpha", 0.5)] == pytest.approx(0.8562, abs=1e-3)
    assert truth[("xi0", 0.5)] == pytest.approx(0.0, abs=1e-12)
    assert truth[("lb", 0.5)] == pytest.approx(truth[("delta_lower", 0.5)])


def test_config_sorts_and_checks_points():
    assert McConfig(panel=PANEL_A, p_points=[0.7, 0.3]).p_points == [0.3, 0.7]
    with pytest.raises(ValueError):
        McConfig(panel=PANEL_A, p_points=[0.0, 0.5])


@pytest.mark.slow
def test_small_run_is_reproducible():
    config = McConfig(panel=PANEL_A, n=3_000, reps=3, seed_base=5, p_points=[0.3, 0.5, 0.7])
    first, second = run_mc(config), run_mc(config)
    pd.testing.assert_frame_equal(first.table, second.table)
    assert len(first.table) == len(ESTIMANDS) * 3
    assert list(first.wide("bias").index) == ESTIMANDS
    assert list(first.coverage.columns) == ["p", "mte", "coverage", "replications"]
    assert first.coverage["coverage"].between(0.0, 1.0).all()


@pytest.mark.slow
def test_single_replication_has_zero_spread():
    report = run_mc(McConfig(panel=PANEL_A, n=3_000, reps=1, p_points=[0.5]))
    finite = report.table.dropna(subset=["sd"])
    assert (finite["sd"] == 0.0).all()


def test_failed_replications_are_logged_not_fatal(monkeypatch):
    real_generate = montecarlo.generate

    def flaky(config, n, seed, n_covariates=0):
        if seed % 2:
            raise EstimationError("window collapsed")
        return real_generate(config, n, seed, n_covariates)

    monkeypatch.setattr(montecarlo, "generate", flaky)
    report = run_mc(McConfig(panel=PANEL_A, n=2_000, reps=2, seed_base=0, p_points=[0.5]))
    assert [f.rep for f in report.failures] == [1]
    assert "window collapsed" in report.failures[0].error
    assert (report.table["failures"] >= 1).all()
    with pytest.raises(ValueError):
        report.wide("median")


@pytest.mark.slow
def test_parallel_workers_match_the_sequential_run():
    config = McConfig(panel=PANEL_A, n=2_000, reps=2, seed_base=3, p_points=[0.5])
    sequential = run_mc(config)
    parallel = run_mc(config.model_copy(update={"workers": 2}))
    pd.testing.assert_frame_equal(sequential.table, parallel.table)
