"""
classical regression procedures

every procedure exposes fit(dataset) returning a fitted predictor with
predict(x0), the same interface as the network procedures in estimator.py,
so risk estimation, symmetrization and stacking treat them uniformly.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import scipy.linalg

from core import Dataset, safe_ratio
from solvers import lambda_grid, lambda_max, lasso_path, nnls_active_set

logger = logging.getLogger(__name__)

CV_FOLDS = 10


def _points(x0, p: int) -> np.ndarray:
    return np.asarray(x0, dtype=np.float64).reshape(-1, p)


@dataclass
class LinearFit:
    """affine predictor intercept + x0 . coef"""
    intercept: float
    coef: np.ndarray

    def predict(self, x0) -> np.ndarray:
        return self.intercept + _points(x0, self.coef.size) @ self.coef


@dataclass
class ConstantFit:
    value: float

    def predict(self, x0) -> np.ndarray:
        x0 = np.asarray(x0)
        return np.full(1 if x0.ndim == 1 else x0.shape[0], self.value)


@dataclass
class LassoFit(LinearFit):
    lam: float = 0.0
    lambdas: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cv_error: np.ndarray = field(default_factory=lambda: np.zeros(0))


def fold_assignment(n: int, folds: int, rng: np.random.Generator) -> List[np.ndarray]:
    """shuffled row indices split into folds whose sizes differ by at most one"""
    if not 2 <= folds <= n:
        raise ValueError(f"need 2 <= folds <= n, got folds={folds}, n={n}")
    return np.array_split(rng.permutation(n), folds)


def ols_fit(d: Dataset) -> LinearFit:
    """least squares with intercept via a cholesky solve of the centered normal equations"""
    if d.n <= d.p + 1:
        raise ValueError(f"ols needs n > p + 1, got n={d.n}, p={d.p}")
    x_bar, y_bar = d.x.mean(axis=0), d.y.mean()
    xc = d.x - x_bar
    gram = xc.T @ xc
    try:
        factor = scipy.linalg.cho_factor(gram, lower=True)
    except scipy.linalg.LinAlgError as err:
        raise ValueError("ols design is singular") from err
    pivots = np.abs(np.diag(factor[0]))
    if pivots.min() <= 1e-10 * max(pivots.max(), 1.0):
        raise ValueError("ols design is singular")
    coef = scipy.linalg.cho_solve(factor, xc.T @ (d.y - y_bar))
    return LinearFit(intercept=float(y_bar - x_bar @ coef), coef=coef)


def _standardized(d: Dataset):
    x_bar = d.x.mean(axis=0)
    s_x = np.sqrt(((d.x - x_bar) ** 2).mean(axis=0))
    return safe_ratio(d.x - x_bar, s_x), d.y - d.y.mean(), x_bar, s_x


def _to_original_scale(coef_std: np.ndarray, d: Dataset, x_bar, s_x) -> LinearFit:
    coef = safe_ratio(coef_std, s_x)
    return LinearFit(intercept=float(d.y.mean() - x_bar @ coef), coef=coef)


def lasso_fixed_fit(d: Dataset, lam: float) -> LinearFit:
    """lasso on standardized columns at a single penalty"""
    xs, yc, x_bar, s_x = _standardized(d)
    coef = lasso_path(xs, yc, [lam])[-1]
    return _to_original_scale(coef, d, x_bar, s_x)


def lasso_cv_fit(d: Dataset, folds: int = CV_FOLDS, n_lambdas: int = 100, ratio: float = 1e-3,
                 rng: Optional[np.random.Generator] = None) -> LassoFit:
    """
    lasso with the penalty chosen by k-fold cross-validation

    columns are standardized (population sd) before fitting. the grid runs
    geometrically from lam_max of the full data down to ratio * lam_max;
    every fold is standardized with its own training moments.
    """
    if d.n < 20:
        raise ValueError(f"lasso_cv_fit needs n >= 20, got {d.n}")
    rng = np.random.default_rng(0) if rng is None else rng
    xs, yc, x_bar, s_x = _standardized(d)
    lam_max = lambda_max(xs, yc)
    if lam_max == 0.0:
        return LassoFit(intercept=float(d.y.mean()), coef=np.zeros(d.p), lam=0.0)
    lambdas = lambda_grid(lam_max, n_lambdas, ratio)

    errors = np.zeros(n_lambdas)
    for held_out in fold_assignment(d.n, folds, rng):
        train = d.subset(np.setdiff1d(np.arange(d.n), held_out))
        txs, tyc, t_bar, t_sd = _standardized(train)
        path = lasso_path(txs, tyc, lambdas)
        for i, coef_std in enumerate(path):
            fit = _to_original_scale(coef_std, train, t_bar, t_sd)
            errors[i] += np.sum((d.y[held_out] - fit.predict(d.x[held_out])) ** 2)
    errors /= d.n

    best = int(np.argmin(errors))
    coef_std = lasso_path(xs, yc, lambdas[: best + 1])[-1]
    fit = _to_original_scale(coef_std, d, x_bar, s_x)
    logger.debug("lasso cv picked lambda %.4g (index %d of %d)", lambdas[best], best, n_lambdas)
    return LassoFit(fit.intercept, fit.coef, lam=float(lambdas[best]), lambdas=lambdas, cv_error=errors)


def lasso_grid_minimum_fit(d: Dataset, ratio: float = 1e-3) -> LinearFit:
    """lasso at the smallest penalty of the cross-validation grid, ratio * lam_max"""
    xs, yc, _, _ = _standardized(d)
    lam = ratio * lambda_max(xs, yc)
    if lam == 0.0:
        return LinearFit(intercept=float(d.y.mean()), coef=np.zeros(d.p))
    return lasso_fixed_fit(d, lam)


# procedures

class MeanProcedure:
    """T(d)(x0) = mean(y)"""
    name = "mean"

    def fit(self, d: Dataset) -> ConstantFit:
        return ConstantFit(float(d.y.mean()))


class OLSProcedure:
    name = "ols"

    def fit(self, d: Dataset) -> LinearFit:
        return ols_fit(d)


class LassoCVProcedure:
    name = "lasso"

    def __init__(self, folds: int = CV_FOLDS, seed: int = 0):
        self.folds = folds
        self.seed = seed

    def fit(self, d: Dataset) -> LassoFit:
        return lasso_cv_fit(d, self.folds, rng=np.random.default_rng(self.seed))


class LassoGridMinimumProcedure:
    name = "lasso-min"

    def __init__(self, ratio: float = 1e-3):
        self.ratio = ratio

    def fit(self, d: Dataset) -> LinearFit:
        return lasso_grid_minimum_fit(d, self.ratio)


@dataclass
class StackedEnsemble:
    """non-negative combination of base procedures refit on the full data"""
    procedures: list
    weights: np.ndarray
    fits: list
    folds: int = CV_FOLDS

    def predict(self, x0) -> np.ndarray:
        return sum(w * fit.predict(x0) for w, fit in zip(self.weights, self.fits))


def out_of_fold_predictions(procedures: Sequence, d: Dataset, folds: int, rng: np.random.Generator) -> np.ndarray:
    """n x k matrix of level-one predictions"""
    z = np.zeros((d.n, len(procedures)))
    for held_out in fold_assignment(d.n, folds, rng):
        train = d.subset(np.setdiff1d(np.arange(d.n), held_out))
        for k, proc in enumerate(procedures):
            z[held_out, k] = proc.fit(train).predict(d.x[held_out])
    return z


def nnls_stack(procedures: Sequence, d: Dataset, folds: int = CV_FOLDS,
               rng: Optional[np.random.Generator] = None) -> StackedEnsemble:
    """
    stack base procedures with weights from non-negative least squares

    the weights regress y on the out-of-fold predictions of every base
    procedure; the returned ensemble combines base fits on all of d.
    """
    if len(procedures) == 0:
        raise ValueError("nnls_stack needs at least one base procedure")
    if d.n < 20:
        raise ValueError(f"nnls_stack needs n >= 20, got {d.n}")
    rng = np.random.default_rng(0) if rng is None else rng
    z = out_of_fold_predictions(procedures, d, folds, rng)
    weights = nnls_active_set(z, d.y)
    logger.debug("stacking weights %s", np.round(weights, 4))
    return StackedEnsemble(list(procedures), weights, [proc.fit(d) for proc in procedures], folds)


class StackedProcedure:
    def __init__(self, procedures: Sequence, folds: int = CV_FOLDS, seed: int = 0, name: str = "stacked"):
        self.procedures = list(procedures)
        self.folds = folds
        self.seed = seed
        self.name = name

    def fit(self, d: Dataset) -> StackedEnsemble:
        return nnls_stack(self.procedures, d, self.folds, np.random.default_rng(self.seed))
