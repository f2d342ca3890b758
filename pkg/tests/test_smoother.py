import numpy as np
import pytest
from scipy import integrate

from app.core.errors import InsufficientDataError
from app.schemas.dgp import Sample
from app.schemas.estimation import OutcomeGrid, PropensityConfig, SmootherConfig, TableStatus
from app.services.dgp import PANEL_A, generate
from app.services.oracle import closed_forms
from app.services.propensity import fit_logit
from app.services.smoother import (LocalPolynomial, assemble_table, build_table, equivalent_kernel_constant,
                                   kernel_weights, local_derivative, select_bandwidth)


@pytest.mark.parametrize("kernel", ["epanechnikov", "triangular", "uniform", "gaussian"])
def test_kernels_integrate_to_one(kernel):
    lo, hi = (-np.inf, np.inf) if kernel == "gaussian" else (-1.0, 1.0)
    assert integrate.quad(lambda u: float(kernel_weights(u, kernel)), lo, hi)[0] == pytest.approx(1.0)


def test_unknown_kernel():
    with pytest.raises(ValueError):
        kernel_weights(np.zeros(3), "cosine")


@pytest.mark.parametrize("degree", [1, 2])
def test_local_polynomial_is_exact_on_polynomials(degree):
    phat = np.linspace(0.0, 1.0, 401)
    config = SmootherConfig(degree=degree, bandwidth=0.2)
    response = 1.0 + 2.0 * phat + (3.0 * phat ** 2 if degree == 2 else 0.0)
    for p in (0.3, 0.5, 0.7):
        expected = 2.0 + (6.0 * p if degree == 2 else 0.0)
        assert local_derivative(response, phat, p, 1, config, bandwidth=0.2) == pytest.approx(expected, abs=1e-8)
        assert local_derivative(response, phat, p, -1, config, bandwidth=0.2) == pytest.approx(-expected, abs=1e-8)


def test_derivative_is_linear_in_the_response():
    rng = np.random.default_rng(0)
    phat = rng.uniform(size=500)
    a, b = rng.standard_normal(500), rng.standard_normal(500)
    lp = LocalPolynomial(phat, 0.5, 0.25, SmootherConfig())
    assert lp.derivative(a + 2 * b) == pytest.approx(lp.derivative(a) + 2 * lp.derivative(b))
    stacked = lp.derivative(np.column_stack([a, b]))
    np.testing.assert_allclose(stacked, [lp.derivative(a), lp.derivative(b)])


def test_sparse_window_is_an_estimation_error():
    phat = np.array([0.1, 0.1, 0.9, 0.9])
    with pytest.raises(InsufficientDataError):
        LocalPolynomial(phat, 0.5, 0.1, SmootherConfig())


def test_equivalent_kernel_constant_for_odd_order():
    assert equivalent_kernel_constant("epanechnikov", 2, 1) > 0
    # p − ν чётно: момент смещения обнуляется
    assert equivalent_kernel_constant("epanechnikov", 1, 1) is None


def test_bandwidth_rules_are_positive_and_capped():
    rng = np.random.default_rng(1)
    phat = rng.uniform(0.2, 0.8, size=2_000)
    response = np.sin(4 * phat) + 0.1 * rng.standard_normal(2_000)
    h = select_bandwidth(phat, [response], SmootherConfig())
    assert 0 < h <= 0.5 * (phat.max() - phat.min()) + 1e-12
    assert select_bandwidth(phat, [response], SmootherConfig(bandwidth="silverman", bandwidth_scale=2.0)) == \
        pytest.approx(2.0 * 1.06 * np.std(phat, ddof=1) * len(phat) ** -0.2)
    assert select_bandwidth(phat, [response], SmootherConfig(bandwidth=0.1)) == 0.1


def test_explicit_bandwidth_must_be_positive():
    with pytest.raises(ValueError):
        SmootherConfig(bandwidth=-0.1)


def test_assembled_table_drops_negative_masses_and_normalizes():
    grid = OutcomeGrid(edges=[0.0, 1.0, 2.0, 3.0])
    table = assemble_table(0.5, 0.4, 0.5, np.array([0.1, -0.05, 0.3]), np.array([0.2, 0.2, 0.1]), grid)
    np.testing.assert_allclose(table.f0, [0.25, 0.0, 0.75])
    np.testing.assert_allclose(table.f1, [0.4, 0.4, 0.2])
    assert table.F1[-1] == 1.0
    assert table.alpha_hat == pytest.approx(0.8)


def test_alpha_is_clamped_and_missing_mass_is_nonestimable():
    grid = OutcomeGrid(edges=[0.0, 1.0, 2.0])
    ones = np.ones(2)
    assert assemble_table(0.5, 0.9, 0.6, ones, ones, grid).alpha_hat == 1.0
    assert assemble_table(0.5, -0.1, 0.6, ones, ones, grid).alpha_hat == 0.0
    table = assemble_table(0.5, 0.2, 0.0, ones, ones, grid)
    assert table.status == TableStatus.nonestimable and not table.estimable
    assert assemble_table(0.5, 0.2, 0.5, ones, -ones, grid).status == TableStatus.nonestimable


def test_bins_are_half_open_with_a_closed_last_bin():
    grid = OutcomeGrid(edges=[0.0, 1.0, 2.0])
    assert grid.bin_index(np.array([-5.0, 0.0, 0.999, 1.0, 2.0, 7.0])).tolist() == [0, 0, 0, 1, 1, 1]
    assert grid.indicators(np.array([0.5, 1.5])).tolist() == [[1.0, 0.0], [0.0, 1.0]]
    np.testing.assert_allclose(grid.centers, [0.5, 1.5])


def test_grid_from_quantiles_drops_ties():
    grid = OutcomeGrid.from_quantiles(np.array([0.0, 0.0, 0.0, 1.0, 2.0]), 5)
    assert np.all(np.diff(grid.edges) > 0)
    with pytest.raises(ValueError):
        OutcomeGrid(edges=[1.0, 1.0])


def test_bin_slopes_add_up_to_the_selection_slopes(sample_a, smoother):
    fit = fit_logit(sample_a, PropensityConfig())
    grid = OutcomeGrid.from_quantiles(sample_a.y[sample_a.s == 1], 11)
    table = build_table(sample_a, fit, 0.5, grid, smoother)
    # до очистки: γ̂ хранятся как есть
    assert table.gamma1.sum() == pytest.approx(table.pi1, abs=1e-10)
    assert table.gamma0.sum() == pytest.approx(table.pi0, abs=1e-10)


def test_table_does_not_depend_on_row_order(sample_a, smoother):
    perm = np.random.default_rng(3).permutation(sample_a.n)
    shuffled = Sample(frame=sample_a.frame.iloc[perm].reset_index(drop=True))
    grid = OutcomeGrid.from_quantiles(sample_a.y[sample_a.s == 1], 11)
    tables = []
    for sample in (sample_a, shuffled):
        fit = fit_logit(sample, PropensityConfig())
        tables.append(build_table(sample, fit, 0.5, grid, smoother, bandwidth=0.2))
    np.testing.assert_allclose(tables[0].gamma1, tables[1].gamma1, rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(tables[0].gamma0, tables[1].gamma0, rtol=1e-6, atol=1e-9)
    assert tables[0].pi1 == pytest.approx(tables[1].pi1, rel=1e-6)


def test_window_without_selected_rows_is_nonestimable(sample_a, smoother):
    frame = sample_a.frame.copy()
    frame["s"] = 0
    frame["y"] = 0.0
    sample = Sample(frame=frame)
    fit = fit_logit(sample, PropensityConfig())
    grid = OutcomeGrid(edges=[-1.0, 0.0, 1.0])
    table = build_table(sample, fit, 0.5, grid, smoother)
    assert table.pi1 == pytest.approx(0.0, abs=1e-12)
    assert table.status == TableStatus.nonestimable


@pytest.mark.slow
def test_selection_slopes_match_the_closed_forms(smoother):
    sample = generate(PANEL_A, 100_000, seed=12)
    fit = fit_logit(sample, PropensityConfig())
    grid = OutcomeGrid.from_quantiles(sample.y[sample.s == 1], 11)
    table = build_table(sample, fit, 0.5, grid, smoother)
    cf = closed_forms(PANEL_A, 0.5)
    assert table.pi1 == pytest.approx(cf.m1, abs=0.12)
    assert table.pi0 == pytest.approx(cf.m0, abs=0.12)
