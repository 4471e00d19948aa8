"""
adversarial monte carlo training

each iteration runs two sub-steps: (1) sample a batch of datasets from the
current prior and descend the estimator weights on the prediction loss;
(2) sample a fresh batch and ascend the prior weights on the same loss.
pretraining runs sub-step 1 alone against the initial prior.

random draws for dataset b of sub-step j at iteration i come from
SeedSequence([seed, i, j]).spawn(batch)[b], so a run is reproducible from
(seed, iteration) alone and each dataset's gradient does not depend on how
the batch is split across threads.
"""

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from autodiff import Tape, Tensor, concat, exp, gradients, leaves, mean_axis, square
from checkpoint import TrainingState, save_checkpoint
from core import tree_sum
from estimator import EstimatorParams, NonFiniteError
from generators import SampledDistribution, sample_dataset
from optim import AdamConfig, AdamState, adam_step

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("iteration", "est_loss", "prior_loss", "est_grad_norm", "prior_grad_norm", "seconds")

# setting -> (estimator base rate, prior base rate); linear rates depend on sparsity
BASE_RATES = {
    ("linear", 1): (0.0002, 0.0002),
    ("linear", 5): (0.001, 0.001),
    ("flam", None): (0.001, 0.005),
}


class DivergenceError(RuntimeError):
    """raised when a training loss is non-finite or above the divergence threshold"""

    def __init__(self, iteration: int, loss: float, last_good: int):
        super().__init__(f"training diverged at iteration {iteration} (loss {loss}); "
                         f"last good iteration {last_good}")
        self.iteration = iteration
        self.loss = loss
        self.last_good = last_good


def default_rates(setting: str, sparsity: int) -> Tuple[float, float]:
    if setting == "flam":
        return BASE_RATES[("flam", None)]
    return BASE_RATES[("linear", 1)] if sparsity == 1 else BASE_RATES[("linear", 5)]


@dataclass
class TrainConfig:
    iterations: int = 1000
    batch_datasets: int = 100
    eval_points: int = 100
    n_train: int = 100
    estimator_adam: AdamConfig = field(default_factory=lambda: AdamConfig(0.0002, beta1=0.25, decay_exponent=0.15))
    prior_adam: AdamConfig = field(default_factory=lambda: AdamConfig(0.0002, beta1=0.0, decay_exponent=0.25))
    pretrain_iterations: int = 0
    seed: int = 0
    threads: int = 1
    checkpoint_every: int = 0
    checkpoint_path: Optional[str] = None
    log_path: Optional[str] = None
    divergence_threshold: float = 1e6
    progress: bool = False

    def __post_init__(self):
        for name in ("iterations", "pretrain_iterations", "checkpoint_every"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        for name in ("batch_datasets", "eval_points", "threads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n_train < 2:
            raise ValueError(f"n_train must be at least 2, got {self.n_train}")
        if self.estimator_adam.base_rate <= 0:
            raise ValueError(f"estimator base rate must be positive, got {self.estimator_adam.base_rate}")

    @classmethod
    def for_setting(cls, setting: str, sparsity: int, **overrides) -> "TrainConfig":
        """defaults of the experiment setting: base rates, momenta, decay and pretraining"""
        est_rate, prior_rate = default_rates(setting, sparsity)
        options = {
            "estimator_adam": AdamConfig(est_rate, beta1=0.25, decay_exponent=0.15),
            "prior_adam": AdamConfig(prior_rate, beta1=0.0, decay_exponent=0.25),
            "pretrain_iterations": 5000 if setting == "linear" else 0,
        }
        options.update(overrides)
        return cls(**options)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = asdict(value) if isinstance(value, AdamConfig) else value
        return out


@dataclass
class TrainRecord:
    iteration: int
    est_loss: float
    prior_loss: float
    est_grad_norm: float
    prior_grad_norm: float
    seconds: float


@dataclass
class TrainLog:
    """
    per-iteration records

    during pretraining no prior step runs, so prior_loss and prior_grad_norm
    are recorded as 0.
    """
    records: List[TrainRecord] = field(default_factory=list)

    def append(self, record: TrainRecord, path: Optional[str] = None) -> None:
        if self.records and record.iteration <= self.records[-1].iteration:
            raise ValueError(f"iteration {record.iteration} does not follow {self.records[-1].iteration}")
        self.records.append(record)
        if path is not None:
            append_log_row(path, record)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)

    def __len__(self) -> int:
        return len(self.records)


def append_log_row(path, record: TrainRecord) -> None:
    path = Path(path)
    new_file = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as f:
        writer = csv.writer(f)
        if new_file:
            writer.writerow(LOG_COLUMNS)
        writer.writerow([record.iteration] + [repr(float(getattr(record, c))) for c in LOG_COLUMNS[1:]])


# priors as training opponents

def softmax(logits: Tensor) -> Tensor:
    e = exp(logits - float(logits.data.max()))
    return e / e.sum()


class FiniteMixturePrior:
    """
    mixture of fixed priors with trainable simplex weights softmax(logits)

    the expected loss is computed exactly: every batch draws one dataset
    from every component and weights the component losses, so the logits
    receive exact gradients.
    """

    def __init__(self, components: Sequence[Callable[[np.random.Generator], SampledDistribution]],
                 logits: Optional[np.ndarray] = None):
        if len(components) < 2:
            raise ValueError(f"a finite mixture prior needs at least two components, got {len(components)}")
        self.components = list(components)
        start = np.zeros(len(components)) if logits is None else np.asarray(logits, dtype=np.float64)
        if start.shape != (len(components),):
            raise ValueError(f"expected {len(components)} logits, got shape {start.shape}")
        self.weights = {"logits": start.copy()}

    @classmethod
    def from_mixture_weights(cls, components, mixture_weights) -> "FiniteMixturePrior":
        w = np.asarray(mixture_weights, dtype=np.float64)
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixture weights must be strictly positive and sum to 1, got {w}")
        return cls(components, np.log(w))

    def mixture_weights(self) -> np.ndarray:
        return softmax(Tensor(self.weights["logits"])).data

    def expected_loss(self, weights: Mapping[str, Tensor], rng: np.random.Generator,
                      dataset_loss: Callable[[SampledDistribution, np.random.Generator], Tensor]) -> Tensor:
        per_component = [dataset_loss(sample(rng), rng).reshape(1) for sample in self.components]
        return (softmax(weights["logits"]) * concat(per_component, axis=0)).sum()

    def sample_distribution(self, rng: np.random.Generator, weights=None) -> SampledDistribution:
        k = rng.choice(len(self.components), p=self.mixture_weights())
        return self.components[k](rng)

    def describe(self) -> dict:
        return {"kind": "mixture", "components": len(self.components)}


def _expected_loss(prior, weights, rng, dataset_loss) -> Tensor:
    if isinstance(prior, FiniteMixturePrior):
        return prior.expected_loss(weights, rng, dataset_loss)
    return dataset_loss(prior.sample_distribution(rng, weights), rng)


# one sub-step

@dataclass
class BatchGradient:
    loss: float
    grads: Dict[str, np.ndarray]
    dataset_losses: List[float]

    @property
    def grad_norm(self) -> float:
        return math.sqrt(sum(float(np.sum(g * g)) for g in self.grads.values()))


def substep_seeds(seed: int, iteration: int, substep: int, count: int) -> List[np.random.SeedSequence]:
    return np.random.SeedSequence([seed, iteration, substep]).spawn(count)


def _dataset_gradient(estimator, est_arrays, prior, prior_arrays, seed_seq, config: TrainConfig,
                      wrt: str) -> Tuple[float, Dict[str, np.ndarray]]:
    rng = np.random.default_rng(seed_seq)
    est_leaves = leaves(est_arrays, requires_grad=(wrt == "estimator"))
    prior_leaves = leaves(prior_arrays, requires_grad=(wrt == "prior"))
    n, m = config.n_train, config.eval_points

    def dataset_loss(dist: SampledDistribution, stream: np.random.Generator) -> Tensor:
        sample = sample_dataset(dist, n, m, stream)
        pred = estimator.forward(est_leaves, sample.x[None], sample.y.reshape(1, n), sample.x0[None])
        return mean_axis(square(pred - sample.target.reshape(1, m)))

    with Tape() as tape:
        loss = _expected_loss(prior, prior_leaves, rng, dataset_loss)
    target = est_leaves if wrt == "estimator" else prior_leaves
    if loss._node is not None and np.isfinite(loss.item()):
        tape.backward(loss)
    return loss.item(), gradients(target)


def batch_gradient(estimator, prior, config: TrainConfig, iteration: int, substep: int, wrt: str,
                   executor: Optional[ThreadPoolExecutor] = None) -> BatchGradient:
    """
    mean loss over a batch and its gradient with respect to one player

    args:
        estimator: EstimatorParams (or any object with weights and forward)
        prior: PriorGeneratorParams or FiniteMixturePrior
        config: batch sizes and seed
        iteration, substep: select the random substream
        wrt: 'estimator' or 'prior'
        executor: optional thread pool for the per-dataset passes
    """
    if wrt not in ("estimator", "prior"):
        raise ValueError(f"wrt must be 'estimator' or 'prior', got '{wrt}'")
    seeds = substep_seeds(config.seed, iteration, substep, config.batch_datasets)

    def run(seed_seq):
        return _dataset_gradient(estimator, estimator.weights, prior, prior.weights, seed_seq, config, wrt)

    results = list(executor.map(run, seeds)) if executor is not None else [run(s) for s in seeds]
    losses = [r[0] for r in results]
    count = float(len(results))
    names = results[0][1].keys()
    grads = {k: tree_sum([r[1][k] for r in results]) / count for k in names}
    return BatchGradient(loss=tree_sum(losses) / count, grads=grads, dataset_losses=losses)


# main loop

def _checkpoint(config: TrainConfig, estimator, prior, est_state, prior_state, iteration: int) -> None:
    if config.checkpoint_path is None or not isinstance(estimator, EstimatorParams):
        return
    save_checkpoint(config.checkpoint_path, TrainingState(
        estimator=estimator,
        prior_weights=prior.weights,
        prior_description=prior.describe(),
        estimator_adam=est_state,
        prior_adam=prior_state,
        iteration=iteration,
        seed=config.seed,
    ))


def amc_train(config: TrainConfig, estimator, prior,
              resume: Optional[TrainingState] = None) -> Tuple[object, object, TrainLog]:
    """
    alternating descent (estimator) and ascent (prior) on the prediction loss

    args:
        config: schedule, batch sizes, seed and output paths
        estimator: EstimatorParams, updated in place
        prior: PriorGeneratorParams or FiniteMixturePrior, updated in place
        resume: checkpointed state to continue from (adam buffers and iteration)

    returns:
        (estimator, prior, TrainLog)
    """
    if resume is not None:
        est_state = resume.estimator_adam
        prior_state = resume.prior_adam
        start = resume.iteration
        if resume.seed != config.seed:
            raise ValueError(f"checkpoint was written with seed {resume.seed}, config has seed {config.seed}")
    else:
        est_state = prior_state = None
        start = 0
    est_state = est_state or AdamState.zeros(estimator.weights, config.estimator_adam)
    prior_state = prior_state or AdamState.zeros(prior.weights, config.prior_adam)

    total = config.pretrain_iterations + config.iterations
    log = TrainLog()
    if start >= total:
        logger.info("no iterations left: start %d, total %d", start, total)
    if start < config.pretrain_iterations:
        logger.info("pretraining for %d iterations", config.pretrain_iterations - start)

    executor = ThreadPoolExecutor(max_workers=config.threads) if config.threads > 1 else None
    last_good = start
    try:
        for it in tqdm(range(start + 1, total + 1), disable=not config.progress, desc="amc"):
            began = time.perf_counter()

            # step 1: descend the estimator on a fresh batch
            est = _guarded(batch_gradient, estimator, prior, config, it, 1, "estimator", executor,
                           threshold=config.divergence_threshold, last_good=last_good)
            adam_step(estimator.weights, est.grads, est_state)

            # step 2: ascend the prior on an independent batch (skipped while pretraining)
            prior_loss = prior_norm = 0.0
            if it > config.pretrain_iterations:
                if it == config.pretrain_iterations + 1 and config.pretrain_iterations:
                    logger.info("pretraining finished, starting adversarial updates")
                adv = _guarded(batch_gradient, estimator, prior, config, it, 2, "prior", executor,
                               threshold=config.divergence_threshold, last_good=last_good)
                adam_step(prior.weights, adv.grads, prior_state, ascend=True)
                prior_loss, prior_norm = adv.loss, adv.grad_norm

            record = TrainRecord(it, est.loss, prior_loss, est.grad_norm, prior_norm,
                                 time.perf_counter() - began)
            log.append(record, config.log_path)
            logger.debug("iteration %d: est_loss %.6g prior_loss %.6g", it, est.loss, prior_loss)
            last_good = it

            if config.checkpoint_every and it % config.checkpoint_every == 0:
                _checkpoint(config, estimator, prior, est_state, prior_state, it)
    finally:
        if executor is not None:
            executor.shutdown()

    _checkpoint(config, estimator, prior, est_state, prior_state, total)
    return estimator, prior, log


def _guarded(fn, *args, threshold: float, last_good: int) -> BatchGradient:
    iteration = args[3]
    try:
        result = fn(*args)
    except NonFiniteError as err:
        raise DivergenceError(iteration, float("nan"), last_good) from err
    if not math.isfinite(result.loss) or result.loss > threshold:
        raise DivergenceError(iteration, result.loss, last_good)
    return result
