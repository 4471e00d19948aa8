"""
Unit tests for risk estimation and the real-data harness.
"""

import csv
import dataclasses

import numpy as np
import pytest

from baselines import MeanProcedure, OLSProcedure
from estimator import ArchitectureConfig, EquivariantProcedure, init_params, symmetrize
from evaluation import (RESULT_COLUMNS, CSVFormatError, ReplicationError, RiskEstimate, estimate_risk,
                        feature_noising_harness, noising_draw, read_csv_dataset, write_results_csv)
from generators import init_generator
from scenarios import evaluation_prior, generator_prior


class _ZeroFit:
    def predict(self, x0):
        return np.zeros(np.asarray(x0).shape[0])


class _Zero:
    name = "zero"

    def fit(self, d):
        return _ZeroFit()


class _FailFirst:
    """raises on its first fit only"""
    name = "flaky"

    def __init__(self):
        self.calls = 0

    def fit(self, d):
        self.calls += 1
        if self.calls == 1:
            raise np.linalg.LinAlgError("singular")
        return MeanProcedure().fit(d)


class _AlwaysFail:
    name = "broken"

    def fit(self, d):
        raise ValueError("no fit")


def _table(rng, rows=130):
    x = rng.standard_normal((rows, 4))
    return x, x @ np.array([1.0, 2.0, 0.0, 0.0]) + 0.5 * rng.standard_normal(rows)


def test_risk_estimate_from_losses():
    """Test mean and standard error of three losses."""
    r = RiskEstimate.from_losses([1.0, 2.0, 3.0], setting="s")
    assert r.mean == 2.0
    assert abs(r.std_error - np.sqrt(1.0 / 3.0)) < 1e-15
    assert r.row("ols", 50) == {"estimator": "ols", "setting": "s", "n": 50, "mean_mse": 2.0,
                                "std_error": r.std_error, "reps": 3}
    with pytest.raises(ValueError):
        RiskEstimate.from_losses([1.0])


def test_exact_procedure_has_zero_risk():
    """Test that predicting the true regression gives zero risk."""
    r = estimate_risk(_Zero(), evaluation_prior("linear", 2, "null", p=3), n=10, n_eval=5, reps=20)
    assert r.mean == 0.0 and r.std_error == 0.0


def test_mean_procedure_under_null_prior():
    """Test the sample mean risk sigma^2 / n when the regression is zero."""
    n = 20
    r = estimate_risk(MeanProcedure(), evaluation_prior("linear", 1, "null", p=3), n=n, n_eval=10, reps=400, seed=3)
    assert abs(r.mean - 1.0 / n) < 5 * r.std_error


def test_same_seed_same_risk():
    """Test reproducibility and independence from the thread count."""
    prior = evaluation_prior("linear", 1, "boundary", p=3)
    a = estimate_risk(OLSProcedure(), prior, n=15, n_eval=5, reps=10, seed=7)
    b = estimate_risk(OLSProcedure(), prior, n=15, n_eval=5, reps=10, seed=7, threads=3)
    assert a == b


def test_failed_replications():
    """Test that one failure in 200 is skipped and total failure raises."""
    prior = evaluation_prior("linear", 1, "null", p=2)
    r = estimate_risk(_FailFirst(), prior, n=5, n_eval=3, reps=200)
    assert r.skipped == 1 and r.n_replications == 199
    with pytest.raises(ReplicationError):
        estimate_risk(_AlwaysFail(), prior, n=5, n_eval=3, reps=10)


def test_read_csv_dataset(tmp_path):
    """Test parsing a numeric csv with an outcome column."""
    path = tmp_path / "data.csv"
    path.write_text("a,y,b\n1,2,3\n4,5,6\n")
    names, x, y = read_csv_dataset(path, "y")
    assert names == ["a", "b"]
    assert np.array_equal(x, [[1.0, 3.0], [4.0, 6.0]])
    assert np.array_equal(y, [2.0, 5.0])


@pytest.mark.parametrize("content, outcome, row, column", [
    ("a,y\n1,2\n3,x\n", "y", 3, "y"),
    ("a,y\n1,2\nnan,4\n", "y", 3, "a"),
    ("a,y\n1,2\n", "z", 1, "z"),
    ("a,y\n1,2\n3\n", "y", 3, ""),
])
def test_read_csv_errors(tmp_path, content, outcome, row, column):
    """Test that malformed cells report their row and column."""
    path = tmp_path / "bad.csv"
    path.write_text(content)
    with pytest.raises(CSVFormatError) as info:
        read_csv_dataset(path, outcome)
    assert info.value.row == row
    assert info.value.column == column


def test_noising_draw(rng):
    """Test the kept features, noise columns and row split."""
    x, _ = _table(rng)
    draw = noising_draw(x, 2, 10, 100, rng)
    assert draw.x.shape == (130, 10)
    assert len(set(draw.features.tolist())) == 2
    assert np.array_equal(draw.x[:, :2], x[:, draw.features])
    assert draw.train.size == 100 and draw.test.size == 30
    assert not set(draw.train.tolist()) & set(draw.test.tolist())


def test_harness_deterministic(rng):
    """Test that the same seed gives the same results and OLS beats the mean."""
    x, y = _table(rng)
    procedures = {"ols": OLSProcedure(), "mean": MeanProcedure()}
    a = feature_noising_harness(x, y, procedures, s=2, p_total=5, reps=6, seed=1)
    b = feature_noising_harness(x, y, procedures, s=2, p_total=5, reps=6, seed=1, threads=2)
    assert a == b
    assert a["ols"].setting == "s=2"
    assert a["ols"].mean < a["mean"].mean


def test_harness_constant_outcome(rng):
    """Test that a constant outcome gives zero OLS error."""
    x, _ = _table(rng)
    res = feature_noising_harness(x, np.full(130, 3.0), {"ols": OLSProcedure()}, s=1, p_total=3, reps=3)
    assert res["ols"].mean < 1e-20


def test_harness_validation(rng):
    """Test row count and feature count requirements."""
    x, y = _table(rng, rows=110)
    with pytest.raises(ValueError):
        feature_noising_harness(x, y, {"ols": OLSProcedure()}, s=1)
    x, y = _table(rng)
    with pytest.raises(ValueError):
        feature_noising_harness(x, y, {"ols": OLSProcedure()}, s=5)


def test_write_results_csv(tmp_path):
    """Test the result file header and values."""
    path = write_results_csv(tmp_path / "out" / "results.csv",
                             [RiskEstimate.from_losses([1.0, 3.0], "linear/boundary").row("ols", 100)])
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    assert tuple(rows[0]) == RESULT_COLUMNS
    assert rows[0]["estimator"] == "ols" and float(rows[0]["mean_mse"]) == 2.0


def _combined_error(a, b):
    return float(np.sqrt(a.std_error ** 2 + b.std_error ** 2))


def test_symmetrization_does_not_raise_risk():
    """Test that the symmetrized network is no worse than the network under a sign-symmetric prior."""
    params = init_params(ArchitectureConfig.uniform(4, 1), seed=6)
    prior = evaluation_prior("linear", 1, "boundary", p=3)
    base = estimate_risk(EquivariantProcedure(params), prior, n=10, n_eval=5, reps=2000, seed=17)
    sym = estimate_risk(symmetrize(params), prior, n=10, n_eval=5, reps=2000, seed=17)
    assert sym.mean <= base.mean + 2.0 * _combined_error(base, sym)


def test_feature_permutation_leaves_risk_unchanged():
    """Test that an equivariant procedure has the same risk with and without the random feature permutation."""
    params = init_params(ArchitectureConfig.uniform(4, 1), seed=7)
    permuted = init_generator("linear", 1, 3, seed=8, hidden_width=4, hidden_layers=1)
    fixed = dataclasses.replace(permuted, random_permutation=False)
    procedure = EquivariantProcedure(params)
    a = estimate_risk(procedure, generator_prior(permuted), n=10, n_eval=5, reps=2000, seed=19)
    b = estimate_risk(procedure, generator_prior(fixed), n=10, n_eval=5, reps=2000, seed=19)
    assert abs(a.mean - b.mean) <= 2.0 * _combined_error(a, b)
