"""
Unit tests for adversarial training.
"""

import csv

import numpy as np
import pytest

from checkpoint import rebuild_generator, restore_checkpoint
from estimator import ArchitectureConfig, MeanEstimator, init_params
from generators import init_generator
from optim import AdamConfig, AdamState, adam_step
from scenarios import evaluation_prior
from trainer import (LOG_COLUMNS, DivergenceError, FiniteMixturePrior, TrainConfig, amc_train, batch_gradient,
                     default_rates, substep_seeds)


def _players(seed=0):
    estimator = init_params(ArchitectureConfig.uniform(4, 1), seed=seed)
    prior = init_generator("linear", 2, 3, seed=seed + 1, hidden_width=4, hidden_layers=1)
    return estimator, prior


def _config(**overrides):
    options = dict(iterations=3, batch_datasets=3, eval_points=4, n_train=6,
                   estimator_adam=AdamConfig(0.01, beta1=0.25, decay_exponent=0.15),
                   prior_adam=AdamConfig(0.01, beta1=0.0, decay_exponent=0.25), seed=5)
    options.update(overrides)
    return TrainConfig(**options)


def _same(a, b):
    return set(a) == set(b) and all(np.array_equal(a[k], b[k]) for k in a)


def test_default_rates():
    """Test the per-setting base rates."""
    assert default_rates("linear", 1) == (0.0002, 0.0002)
    assert default_rates("linear", 5) == (0.001, 0.001)
    assert default_rates("flam", 1) == (0.001, 0.005)
    cfg = TrainConfig.for_setting("linear", 1)
    assert cfg.pretrain_iterations == 5000
    assert cfg.estimator_adam.beta1 == 0.25 and cfg.prior_adam.beta1 == 0.0


def test_invalid_config():
    """Test that bad schedules are rejected."""
    with pytest.raises(ValueError):
        _config(iterations=-1)
    with pytest.raises(ValueError):
        _config(n_train=1)
    with pytest.raises(ValueError):
        _config(estimator_adam=AdamConfig(0.0))


def test_zero_iterations_leave_weights():
    """Test that K = 0 returns the initial weights and an empty log."""
    estimator, prior = _players()
    before_est, before_prior = estimator.copy().weights, prior.copy().weights
    _, _, log = amc_train(_config(iterations=0), estimator, prior)
    assert len(log) == 0
    assert _same(estimator.weights, before_est)
    assert _same(prior.weights, before_prior)


def test_zero_prior_rate_freezes_prior():
    """Test that a zero prior rate leaves the generator bit-identical."""
    estimator, prior = _players()
    before_est, before_prior = estimator.copy().weights, prior.copy().weights
    amc_train(_config(prior_adam=AdamConfig(0.0)), estimator, prior)
    assert _same(prior.weights, before_prior)
    assert not _same(estimator.weights, before_est)


def test_threads_give_identical_weights():
    """Test that splitting batches across threads does not change results."""
    runs = []
    for threads in (1, 3):
        estimator, prior = _players()
        amc_train(_config(threads=threads), estimator, prior)
        runs.append((estimator.weights, prior.weights))
    assert _same(runs[0][0], runs[1][0])
    assert _same(runs[0][1], runs[1][1])


def test_resume_matches_uninterrupted_run(tmp_path):
    """Test that stopping after 2 iterations and resuming to 4 matches a 4-iteration run."""
    estimator, prior = _players()
    _, _, full_log = amc_train(_config(iterations=4), estimator, prior)

    first_est, first_prior = _players()
    amc_train(_config(iterations=2, checkpoint_path=str(tmp_path / "ckpt")), first_est, first_prior)
    state = restore_checkpoint(tmp_path / "ckpt")
    assert state.iteration == 2
    resumed_est, resumed_prior = state.estimator, rebuild_generator(state)
    _, _, tail_log = amc_train(_config(iterations=4), resumed_est, resumed_prior, resume=state)

    assert _same(resumed_est.weights, estimator.weights)
    assert _same(resumed_prior.weights, prior.weights)
    assert list(tail_log.column("iteration")) == [3.0, 4.0]
    assert np.array_equal(tail_log.column("est_loss"), full_log.column("est_loss")[2:])


def test_resume_rejects_other_seed(tmp_path):
    """Test that a checkpoint cannot be resumed under a different seed."""
    estimator, prior = _players()
    amc_train(_config(iterations=1, checkpoint_path=str(tmp_path / "c")), estimator, prior)
    state = restore_checkpoint(tmp_path / "c")
    with pytest.raises(ValueError, match="seed"):
        amc_train(_config(iterations=2, seed=6), state.estimator, rebuild_generator(state), resume=state)


def test_pretraining_logs_zero_prior_loss():
    """Test that pretraining rows skip the prior step."""
    estimator, prior = _players()
    before_prior = prior.copy().weights
    _, _, log = amc_train(_config(iterations=0, pretrain_iterations=2), estimator, prior)
    assert len(log) == 2
    assert np.all(log.column("prior_loss") == 0.0)
    assert _same(prior.weights, before_prior)


def test_log_file(tmp_path):
    """Test the CSV log columns and one row per iteration."""
    path = tmp_path / "train_log.csv"
    estimator, prior = _players()
    _, _, log = amc_train(_config(iterations=2, pretrain_iterations=1, log_path=str(path)), estimator, prior)
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    assert tuple(rows[0]) == LOG_COLUMNS
    assert [r[0] for r in rows[1:]] == ["1", "2", "3"]
    assert float(rows[1][2]) == 0.0
    assert float(rows[3][1]) == log.records[-1].est_loss


def test_divergence_reports_last_good_iteration():
    """Test that a loss above the threshold stops training."""
    estimator, prior = _players()
    with pytest.raises(DivergenceError) as info:
        amc_train(_config(divergence_threshold=1e-300), estimator, prior)
    assert info.value.iteration == 1
    assert info.value.last_good == 0


def test_batch_gradient_is_mean_of_datasets():
    """Test the batch loss against its per-dataset losses and the seed derivation."""
    estimator, prior = _players()
    grad = batch_gradient(estimator, prior, _config(), iteration=1, substep=1, wrt="estimator")
    assert len(grad.dataset_losses) == 3
    assert abs(grad.loss - np.mean(grad.dataset_losses)) < 1e-12
    assert set(grad.grads) == set(estimator.weights)
    assert grad.grad_norm > 0
    a, b = substep_seeds(5, 1, 1, 2), substep_seeds(5, 1, 2, 2)
    assert a[0].generate_state(2).tolist() != b[0].generate_state(2).tolist()
    with pytest.raises(ValueError):
        batch_gradient(estimator, prior, _config(), 1, 1, "both")


def test_mixture_requires_two_components():
    """Test that empty and single-component mixtures are rejected."""
    with pytest.raises(ValueError):
        FiniteMixturePrior([])
    with pytest.raises(ValueError, match="two components"):
        FiniteMixturePrior([evaluation_prior("linear", 1, "null", p=2)])


def test_mixture_weights_on_simplex():
    """Test the softmax parametrization and explicit mixture weights."""
    components = [evaluation_prior("linear", 1, v, p=2) for v in ("boundary", "null", "interior")]
    prior = FiniteMixturePrior.from_mixture_weights(components, [0.2, 0.3, 0.5])
    assert np.allclose(prior.mixture_weights(), [0.2, 0.3, 0.5])
    assert abs(prior.mixture_weights().sum() - 1.0) < 1e-12
    with pytest.raises(ValueError):
        FiniteMixturePrior.from_mixture_weights(components, [0.5, 0.5, 0.0])
    assert prior.sample_distribution(np.random.default_rng(0)).p == 2


def test_mixture_moves_toward_harder_component():
    """Test that ascent raises the weight of the prior where the mean estimator fails."""
    prior = FiniteMixturePrior([evaluation_prior("linear", 1, "null", p=2),
                                evaluation_prior("linear", 1, "boundary", p=2)])
    config = _config(iterations=5, batch_datasets=4, n_train=10,
                     prior_adam=AdamConfig(0.1, beta1=0.0, decay_exponent=0.25))
    amc_train(config, MeanEstimator(), prior)
    assert prior.mixture_weights()[1] > 0.55


def test_estimator_step_lowers_frozen_batch_loss():
    """Test that one small descent step lowers the loss on the batch it was computed from."""
    estimator, prior = _players()
    config = _config(batch_datasets=4)
    before = batch_gradient(estimator, prior, config, 1, 1, "estimator")
    adam_step(estimator.weights, before.grads, AdamState.zeros(estimator.weights, AdamConfig(1e-5)))
    after = batch_gradient(estimator, prior, config, 1, 1, "estimator")
    assert after.loss < before.loss


def test_prior_step_raises_frozen_batch_loss():
    """Test that one small ascent step raises the loss on the batch it was computed from."""
    estimator, prior = _players()
    config = _config(batch_datasets=4)
    before = batch_gradient(estimator, prior, config, 1, 2, "prior")
    adam_step(prior.weights, before.grads, AdamState.zeros(prior.weights, AdamConfig(1e-5)), ascend=True)
    after = batch_gradient(estimator, prior, config, 1, 2, "prior")
    assert after.loss > before.loss


def test_mixture_ascent_increases_over_windows():
    """Test that the harder component's weight grows from one 50-step window to the next."""
    prior = FiniteMixturePrior([evaluation_prior("linear", 1, "null", p=2),
                                evaluation_prior("linear", 1, "boundary", p=2)])
    estimator = MeanEstimator()
    config = _config(batch_datasets=8, n_train=10)
    state = AdamState.zeros(prior.weights, AdamConfig(0.1, beta1=0.0, decay_exponent=0.25))
    history = []
    for iteration in range(1, 151):
        grad = batch_gradient(estimator, prior, config, iteration, 2, "prior")
        adam_step(prior.weights, grad.grads, state, ascend=True)
        history.append(prior.mixture_weights()[1])
    windows = np.asarray(history).reshape(3, 50).mean(axis=1)
    assert np.all(np.diff(windows) > 0)
    assert windows[-1] > 0.9


@pytest.mark.slow
def test_toy_training_reduces_estimator_loss():
    """Test that 2000 estimator steps against a fixed sparse linear prior lower the loss."""
    estimator = init_params(ArchitectureConfig.uniform(8, 1), seed=11)
    prior = init_generator("linear", 1, 2, seed=12)
    config = TrainConfig(iterations=2000, batch_datasets=16, eval_points=20, n_train=20,
                         estimator_adam=AdamConfig(0.001, beta1=0.25, decay_exponent=0.15),
                         prior_adam=AdamConfig(0.0, beta1=0.0, decay_exponent=0.25), seed=13)
    _, _, log = amc_train(config, estimator, prior)
    losses = np.asarray(log.column("est_loss"))
    assert len(losses) == 2000
    assert losses[-200:].mean() < losses[:200].mean()
