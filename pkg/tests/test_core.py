"""
Unit tests for core data structures.
"""

import numpy as np
import pytest

from core import Dataset, rank_against, rank_preprocess, safe_ratio, standardize, tree_sum


def test_dataset_creation():
    """Test basic dataset creation."""
    d = Dataset([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], [1.0, 2.0, 3.0])
    assert d.n == 3
    assert d.p == 2
    assert d.y.shape == (3,)


def test_dataset_single_feature_vector():
    """Test that a 1-d feature array becomes one column."""
    d = Dataset([1.0, 2.0, 3.0], [0.0, 1.0, 0.0])
    assert d.p == 1


@pytest.mark.parametrize("x, y", [
    ([[1.0]], [1.0]),
    ([[1.0], [2.0]], [1.0, 2.0, 3.0]),
    ([[1.0], [np.nan]], [1.0, 2.0]),
    ([[1.0], [2.0]], [1.0, np.inf]),
])
def test_dataset_rejects_invalid(x, y):
    """Test n >= 2, matching lengths and finite entries."""
    with pytest.raises(ValueError):
        Dataset(x, y)


def test_subset_and_outcome():
    """Test row restriction and outcome replacement."""
    d = Dataset(np.arange(8.0).reshape(4, 2), [1.0, 2.0, 3.0, 4.0])
    sub = d.subset([0, 2])
    assert np.array_equal(sub.y, [1.0, 3.0])
    flipped = d.with_outcome(-d.y)
    assert np.array_equal(flipped.x, d.x)
    assert np.array_equal(flipped.y, -d.y)


def test_standardize_outcome_formula():
    """Test y = (1, 2, 3) with population standard deviation."""
    d = Dataset([[0.0], [1.0], [5.0]], [1.0, 2.0, 3.0])
    z = standardize(d, [1.0])
    s = np.sqrt(2.0 / 3.0)
    assert z.y_bar == 2.0
    assert abs(z.s_y - s) < 1e-15
    assert np.allclose(z.y_std, [-1.0 / s, 0.0, 1.0 / s], atol=1e-15)


def test_standardize_constant_column():
    """Test the 0/0 = 0 convention for a constant feature."""
    d = Dataset([[7.0, 1.0], [7.0, 2.0], [7.0, 4.0]], [1.0, 1.0, 1.0])
    z = standardize(d, [3.0, 0.0])
    assert z.s_x[0] == 0.0
    assert np.all(z.x_std[:, 0] == 0.0)
    assert z.x0_std[0] == 0.0
    assert z.s_y == 0.0
    assert np.all(z.y_std == 0.0)


def test_standardize_round_trip(rng):
    """Test that (x, y, x0) is recovered from the standardized statistic."""
    d = Dataset(rng.standard_normal((5, 3)), rng.standard_normal(5))
    x0 = rng.standard_normal(3)
    x, y, rx0 = standardize(d, x0).restore()
    assert np.max(np.abs(x - d.x)) <= 1e-12
    assert np.max(np.abs(y - d.y)) <= 1e-12
    assert np.max(np.abs(rx0 - x0)) <= 1e-12


def test_standardized_moments(rng):
    """Test zero means and unit population sd of the standardized columns."""
    d = Dataset(3.0 + 2.0 * rng.standard_normal((20, 4)), rng.standard_normal(20))
    z = standardize(d, np.zeros(4))
    assert np.max(np.abs(z.x_std.mean(axis=0))) <= 1e-10 * d.n
    assert np.allclose(np.sqrt((z.x_std ** 2).mean(axis=0)), 1.0)


def test_standardize_wrong_point_length():
    """Test that x0 must have p entries."""
    d = Dataset([[0.0, 1.0], [1.0, 0.0]], [0.0, 1.0])
    with pytest.raises(ValueError):
        standardize(d, [1.0])


def test_rank_distinct_values():
    """Test ranks of distinct values."""
    d = Dataset([[3.0], [1.0], [2.0]], [0.0, 0.0, 0.0])
    ranked, _ = rank_preprocess(d, [2.5])
    assert np.array_equal(ranked.x[:, 0], [3.0, 1.0, 2.0])


def test_rank_ties_count_every_tie():
    """Test that tied values both receive the weak rank."""
    d = Dataset([[1.0], [1.0]], [0.0, 1.0])
    ranked, x0 = rank_preprocess(d, [0.5])
    assert np.array_equal(ranked.x[:, 0], [2.0, 2.0])
    assert x0[0] == 0.0


def test_rank_keeps_outcome(rng):
    """Test that rank preprocessing leaves y untouched."""
    d = Dataset(rng.standard_normal((6, 2)), rng.standard_normal(6))
    ranked, _ = rank_preprocess(d, np.zeros(2))
    assert np.array_equal(ranked.y, d.y)
    assert ranked.x.min() >= 1 and ranked.x.max() <= 6


def test_rank_against_batched(rng):
    """Test that batched ranking matches ranking each dataset separately."""
    ref = rng.standard_normal((3, 7, 2))
    pts = rng.standard_normal((3, 4, 2))
    batched = rank_against(ref, pts)
    for b in range(3):
        assert np.array_equal(batched[b], rank_against(ref[b], pts[b]))


def test_safe_ratio():
    """Test 0/0 = 0 and ordinary division elsewhere."""
    out = safe_ratio(np.array([0.0, 3.0]), np.array([0.0, 2.0]))
    assert np.array_equal(out, [0.0, 1.5])


def test_tree_sum_order_independent_of_grouping(rng):
    """Test that tree summation of split lists matches the flat tree sum."""
    values = list(rng.standard_normal(16))
    assert tree_sum(values) == tree_sum([tree_sum(values[:8]), tree_sum(values[8:])])
    assert abs(tree_sum(values) - sum(values)) < 1e-12
    assert tree_sum([]) == 0.0
