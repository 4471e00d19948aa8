"""
Unit tests for the classical regression procedures.
"""

import numpy as np
import pytest

from baselines import (LassoCVProcedure, LassoGridMinimumProcedure, MeanProcedure, OLSProcedure, StackedProcedure,
                       fold_assignment, lasso_cv_fit, lasso_fixed_fit, lasso_grid_minimum_fit, nnls_stack, ols_fit)
from core import Dataset
from evaluation import estimate_risk
from scenarios import evaluation_prior


class _TruthFit:
    def predict(self, x0):
        return 5.0 * np.asarray(x0).reshape(-1, 3)[:, 0]


class _Truth:
    name = "truth"

    def fit(self, d):
        return _TruthFit()


def _linear_data(rng, n=100, noise=1.0):
    x = rng.standard_normal((n, 3))
    return Dataset(x, 5.0 * x[:, 0] + noise * rng.standard_normal(n))


def test_ols_exact_affine_fit(rng):
    """Test that a noiseless affine outcome is recovered."""
    x = rng.standard_normal((20, 3))
    fit = ols_fit(Dataset(x, 1.0 + x @ np.array([2.0, -1.0, 0.5])))
    assert abs(fit.intercept - 1.0) < 1e-10
    assert np.allclose(fit.coef, [2.0, -1.0, 0.5], atol=1e-10)
    assert fit.predict(np.zeros(3)).shape == (1,)


def test_ols_singular_design(rng):
    """Test duplicate columns and too few rows."""
    x = rng.standard_normal((10, 2))
    with pytest.raises(ValueError, match="singular"):
        ols_fit(Dataset(np.column_stack([x, x[:, 0]]), rng.standard_normal(10)))
    with pytest.raises(ValueError):
        ols_fit(Dataset(rng.standard_normal((3, 2)), rng.standard_normal(3)))


def test_mean_procedure(small_dataset, rng):
    """Test that the mean procedure ignores the features."""
    out = MeanProcedure().fit(small_dataset).predict(rng.standard_normal((4, small_dataset.p)))
    assert np.all(out == small_dataset.y.mean())


def test_fold_assignment(rng):
    """Test that folds partition the rows with sizes differing by at most one."""
    folds = fold_assignment(23, 5, rng)
    assert sorted(np.concatenate(folds).tolist()) == list(range(23))
    sizes = [f.size for f in folds]
    assert max(sizes) - min(sizes) <= 1
    with pytest.raises(ValueError):
        fold_assignment(3, 5, rng)


def test_lasso_cv_feature_affine_invariance(rng):
    """Test that shifting and rescaling feature columns leaves predictions unchanged."""
    d = _linear_data(rng)
    x0 = rng.standard_normal((5, 3))
    shift, scale = np.array([1.0, -2.0, 3.0]), np.array([2.0, 0.5, 4.0])
    base = lasso_cv_fit(d, rng=np.random.default_rng(1)).predict(x0)
    moved = lasso_cv_fit(Dataset(shift + scale * d.x, d.y), rng=np.random.default_rng(1)).predict(shift + scale * x0)
    assert np.max(np.abs(base - moved)) < 1e-5


def test_lasso_cv_constant_outcome(rng):
    """Test that a constant outcome gives the constant fit."""
    fit = lasso_cv_fit(Dataset(rng.standard_normal((25, 3)), np.full(25, 2.0)))
    assert fit.lam == 0.0
    assert np.all(fit.predict(rng.standard_normal((3, 3))) == 2.0)


def test_lasso_cv_selects_signal(rng):
    """Test that cross-validation keeps the true coefficient and records the curve."""
    fit = LassoCVProcedure(seed=2).fit(_linear_data(rng, n=120))
    assert abs(fit.coef[0] - 5.0) < 0.5
    assert fit.cv_error.size == fit.lambdas.size == 100
    assert fit.lam in fit.lambdas


def test_lasso_cv_needs_twenty_rows(rng):
    """Test the minimum sample size."""
    with pytest.raises(ValueError):
        lasso_cv_fit(Dataset(rng.standard_normal((10, 2)), rng.standard_normal(10)))


def test_lasso_fixed_large_penalty(rng):
    """Test that a huge penalty gives the mean."""
    d = _linear_data(rng)
    fit = lasso_fixed_fit(d, 1e6)
    assert np.all(fit.coef == 0.0)
    assert abs(fit.intercept - d.y.mean()) < 1e-12


def test_stack_prefers_truth(rng):
    """Test that a base procedure returning the regression function gets nearly all weight."""
    d = _linear_data(rng, n=200, noise=0.1)
    ensemble = nnls_stack([_Truth(), MeanProcedure()], d, rng=np.random.default_rng(0))
    assert np.all(ensemble.weights >= 0)
    assert ensemble.weights[0] >= 0.99


def test_stack_identical_bases(rng):
    """Test non-negative weights and a near-unit total for duplicated bases."""
    d = _linear_data(rng)
    ensemble = StackedProcedure([OLSProcedure(), OLSProcedure()], seed=3).fit(d)
    assert np.all(ensemble.weights >= 0)
    assert abs(ensemble.weights.sum() - 1.0) < 0.1
    x0 = rng.standard_normal((4, 3))
    single = ols_fit(d).predict(x0)
    assert np.allclose(ensemble.predict(x0), ensemble.weights.sum() * single)


def test_stack_validation(rng):
    """Test empty procedure lists and small samples."""
    with pytest.raises(ValueError):
        nnls_stack([], _linear_data(rng))
    with pytest.raises(ValueError):
        nnls_stack([MeanProcedure()], _linear_data(rng, n=10))


@pytest.mark.parametrize("shift, scale", [(-2.0, 3.0), (7.5, 0.25)])
def test_ols_outcome_equivariance(rng, shift, scale):
    """Test that an affine map of the outcome maps the OLS predictions the same way."""
    d = _linear_data(rng, n=40)
    x0 = rng.standard_normal((6, 3))
    base = ols_fit(d).predict(x0)
    moved = ols_fit(Dataset(d.x, shift + scale * d.y)).predict(x0)
    assert np.max(np.abs(moved - (shift + scale * base))) < 1e-10


@pytest.mark.parametrize("shift, scale", [(-2.0, 3.0), (7.5, 0.25)])
def test_lasso_cv_outcome_equivariance(rng, shift, scale):
    """Test that an affine map of the outcome maps the cross-validated lasso predictions the same way."""
    d = _linear_data(rng, n=60, noise=2.0)
    x0 = rng.standard_normal((6, 3))
    base = lasso_cv_fit(d, rng=np.random.default_rng(1))
    moved = lasso_cv_fit(Dataset(d.x, shift + scale * d.y), rng=np.random.default_rng(1))
    assert abs(moved.lam - scale * base.lam) < 1e-10 * max(1.0, scale * base.lam)
    assert np.max(np.abs(moved.predict(x0) - (shift + scale * base.predict(x0)))) < 1e-10


def test_lasso_grid_minimum_close_to_ols(rng):
    """Test that the smallest grid penalty leaves the fit close to least squares."""
    d = _linear_data(rng, n=80)
    lasso, ols = lasso_grid_minimum_fit(d), ols_fit(d)
    assert np.max(np.abs(lasso.coef - ols.coef)) < 0.05
    assert LassoGridMinimumProcedure().name == "lasso-min"


def test_lasso_grid_minimum_risk_matches_ols():
    """Test that the lasso at the grid minimum has the OLS risk within two standard errors."""
    prior = evaluation_prior("linear", 1, "boundary", p=10)
    ols = estimate_risk(OLSProcedure(), prior, n=100, n_eval=50, reps=300, seed=21)
    lasso = estimate_risk(LassoGridMinimumProcedure(), prior, n=100, n_eval=50, reps=300, seed=21)
    combined = np.sqrt(ols.std_error ** 2 + lasso.std_error ** 2)
    assert abs(lasso.mean - ols.mean) <= 2.0 * combined
