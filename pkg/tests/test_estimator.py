"""
Unit tests for the equivariant prediction network and procedures.
"""

import dataclasses

import numpy as np
import pytest

from baselines import OLSProcedure
from checks import equivariance_suite, layer_suite, rank_invariance_suite
from core import Dataset
from estimator import (ArchitectureConfig, EstimatorParams, MeanEstimator, NonFiniteError, forward,
                       init_params, predict, predict_many, symmetrize)


def _small(seed=0, **options):
    return init_params(ArchitectureConfig.uniform(6, 1, **options), seed)


def _zero(params):
    return EstimatorParams(params.config, {k: np.zeros_like(v) for k, v in params.weights.items()})


def test_default_architecture():
    """Test the default channel counts and layer bookkeeping."""
    cfg = ArchitectureConfig()
    assert (cfg.o1, cfg.o2, cfg.o3, cfg.h1, cfg.h2, cfg.h3, cfg.h4) == (50, 50, 10, 10, 3, 10, 3)
    layout = cfg.module_layout()
    assert layout[1][1][0] == 2 and layout[1][1][-1] == 50
    assert layout[3][1][0] == 51
    assert layout[4][1][-1] == 1
    assert len(layout[1][1]) == 12


def test_invalid_architecture():
    """Test that non-positive widths are rejected."""
    with pytest.raises(ValueError):
        ArchitectureConfig(o1=0)


def test_init_deterministic():
    """Test that the same seed gives identical weights and another seed differs."""
    a, b, c = _small(4), _small(4), _small(5)
    assert all(np.array_equal(a.weights[k], b.weights[k]) for k in a.weights)
    assert any(not np.array_equal(a.weights[k], c.weights[k]) for k in a.weights)
    assert set(a.weights) == set(a.expected_shapes())


def test_zero_network_returns_mean(small_dataset, rng):
    """Test that zero weights predict the outcome mean."""
    params = _zero(_small())
    out = predict_many(params, small_dataset, rng.standard_normal((3, small_dataset.p)))
    assert np.allclose(out, small_dataset.y.mean(), atol=1e-14)


def test_constant_outcome_returns_constant(rng):
    """Test that s_y = 0 gives the outcome value whatever the weights."""
    d = Dataset(rng.standard_normal((6, 3)), np.full(6, 2.5))
    assert predict(_small(), d, rng.standard_normal(3)) == 2.5


def test_prediction_shifts_with_outcome_spread(small_dataset, rng):
    """Test that doubling y - y_bar doubles prediction - y_bar."""
    params = _small(1)
    x0 = rng.standard_normal((2, small_dataset.p))
    y_bar = small_dataset.y.mean()
    base = predict_many(params, small_dataset, x0) - y_bar
    stretched = small_dataset.with_outcome(y_bar + 2.0 * (small_dataset.y - y_bar))
    assert np.allclose(predict_many(params, stretched, x0) - y_bar, 2.0 * base, atol=1e-12)


@pytest.mark.parametrize("config", [ArchitectureConfig(), ArchitectureConfig.uniform(6, 1)], ids=["default", "small"])
def test_permutation_and_affine_equivariance(rng, config):
    """Test both transformation properties to relative error 1e-8 on 100 random cases."""
    results = equivariance_suite(init_params(config, 2), rng, cases=100)
    assert [r.tolerance for r in results] == [1e-8, 1e-8]
    for r in results:
        assert r.passed, r


def test_layer_contracts(rng):
    """Test module-level permutation contracts."""
    for r in layer_suite(_small(3), rng, cases=5):
        assert r.passed, r


def test_rank_preprocessing_monotone_invariance(rng):
    """Test that increasing per-feature maps leave ranked predictions unchanged."""
    results = rank_invariance_suite(_small(4), rng, cases=50)
    assert results[0].passed
    assert results[0].max_deviation == 0.0


def test_weights_reused_across_sizes(rng):
    """Test finite predictions for sample sizes and feature counts of any size."""
    params = _small(5)
    for n, p in [(2, 1), (3, 7), (40, 2)]:
        d = Dataset(rng.standard_normal((n, p)), rng.standard_normal(n))
        assert np.all(np.isfinite(predict_many(params, d, rng.standard_normal((3, p)))))


def test_batched_forward_matches_single(rng):
    """Test that a batch of datasets gives the same predictions as separate calls."""
    params = _small(6)
    x, y, x0 = rng.standard_normal((3, 7, 2)), rng.standard_normal((3, 7)), rng.standard_normal((3, 4, 2))
    batched = forward(params.leaves(False), params.config, x, y, x0).data
    for b in range(3):
        assert np.allclose(batched[b], predict_many(params, Dataset(x[b], y[b]), x0[b]), atol=1e-13)


def test_forward_shape_errors(rng):
    """Test that mismatched inputs are rejected."""
    params = _small()
    with pytest.raises(ValueError):
        forward(params.leaves(False), params.config, rng.standard_normal((1, 5, 2)),
                rng.standard_normal((1, 4)), rng.standard_normal((1, 3, 2)))


def test_non_finite_names_module(small_dataset, rng):
    """Test that overflow inside the network names the module."""
    params = _small(7)
    huge = {k: (v * 1e200 if k.startswith("m1.") else v) for k, v in params.weights.items()}
    with pytest.raises(NonFiniteError, match="module"):
        predict_many(EstimatorParams(params.config, huge), small_dataset, rng.standard_normal((1, 4)))


def test_symmetrize_zero_network(small_dataset, rng):
    """Test that the symmetrized zero network still predicts the mean."""
    sym = symmetrize(_zero(_small()))
    out = sym.fit(small_dataset).predict(rng.standard_normal((2, small_dataset.p)))
    assert np.allclose(out, small_dataset.y.mean(), atol=1e-14)


def test_symmetrize_odd_procedure_unchanged(rng):
    """Test that OLS on a zero-mean design is unchanged by symmetrization."""
    x = rng.standard_normal((30, 3))
    x -= x.mean(axis=0)
    d = Dataset(x, rng.standard_normal(30))
    x0 = rng.standard_normal((5, 3))
    base = OLSProcedure().fit(d).predict(x0)
    sym = symmetrize(OLSProcedure()).fit(d).predict(x0)
    assert np.max(np.abs(base - sym)) <= 1e-10


def test_symmetrize_idempotent(small_dataset, rng):
    """Test sym(sym(T)) = sym(T)."""
    params = _small(8)
    x0 = rng.standard_normal((4, small_dataset.p))
    once = symmetrize(params).fit(small_dataset).predict(x0)
    twice = symmetrize(symmetrize(params)).fit(small_dataset).predict(x0)
    assert np.max(np.abs(once - twice)) <= 1e-12
    assert symmetrize(symmetrize(params)).name == "amc-sym-sym"


def test_mean_estimator_forward(rng):
    """Test the weightless mean estimator in batched form."""
    y = rng.standard_normal((2, 5))
    out = MeanEstimator().forward({}, rng.standard_normal((2, 5, 3)), y, rng.standard_normal((2, 4, 3)))
    assert out.shape == (2, 4)
    assert np.allclose(out.data, y.mean(axis=1, keepdims=True))


def test_config_roundtrip():
    """Test that to_dict rebuilds the same config."""
    cfg = dataclasses.replace(ArchitectureConfig.uniform(4, 2), rank_preprocess=True)
    assert ArchitectureConfig(**cfg.to_dict()) == cfg
