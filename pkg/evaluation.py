"""
monte carlo risk estimation and the real-data harness

risk of a procedure under a prior: for each replication draw P, a dataset
of size n and n_eval fresh evaluation points, and average the squared error
against the noiseless regression function divided by the noise variance.
replication r uses the random stream SeedSequence([seed, r]), so two
procedures evaluated with the same seed see the same datasets.
"""

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core import Dataset, tree_sum
from generators import SampledDistribution, sample_dataset

logger = logging.getLogger(__name__)

RESULT_COLUMNS = ("estimator", "setting", "n", "mean_mse", "std_error", "reps")
MAX_SKIPPED_FRACTION = 0.01

# failures that skip a replication instead of aborting the run
REPLICATION_FAILURES = (ArithmeticError, ValueError, np.linalg.LinAlgError, RuntimeError)


class ReplicationError(RuntimeError):
    """raised when more than 1% of replications fail"""


class CSVFormatError(ValueError):
    """malformed input csv; carries the 1-based row and the column name"""

    def __init__(self, path, row: int, column: str, message: str):
        super().__init__(f"{path}: row {row}, column '{column}': {message}")
        self.row = row
        self.column = column


@dataclass(frozen=True)
class RiskEstimate:
    mean: float
    std_error: float
    n_replications: int
    setting: str = ""
    skipped: int = 0

    @classmethod
    def from_losses(cls, losses: Sequence[float], setting: str = "", skipped: int = 0) -> "RiskEstimate":
        """mean and standard error (sample sd / sqrt(count)) with tree summation"""
        count = len(losses)
        if count < 2:
            raise ValueError(f"need at least 2 successful replications, got {count}")
        values = np.asarray(losses, dtype=np.float64)
        mean = tree_sum(list(values)) / count
        var = tree_sum(list((values - mean) ** 2)) / (count - 1)
        return cls(float(mean), float(math.sqrt(var / count)), count, setting, skipped)

    def row(self, estimator: str, n: int) -> dict:
        return {"estimator": estimator, "setting": self.setting, "n": n, "mean_mse": self.mean,
                "std_error": self.std_error, "reps": self.n_replications}


def replication_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def _parallel_map(fn, items, threads: int) -> list:
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _collect(outcomes: List[Optional[float]], reps: int, label: str) -> Tuple[List[float], int]:
    kept = [v for v in outcomes if v is not None]
    skipped = reps - len(kept)
    if skipped > MAX_SKIPPED_FRACTION * reps:
        raise ReplicationError(f"{label}: {skipped} of {reps} replications failed")
    if skipped:
        logger.warning("%s: skipped %d of %d replications", label, skipped, reps)
    return kept, skipped


def replication_loss(procedure, prior_sampler: Callable[[np.random.Generator], SampledDistribution],
                     n: int, n_eval: int, rng: np.random.Generator) -> float:
    """standardized squared error of one replication"""
    dist = prior_sampler(rng)
    sample = sample_dataset(dist, n, n_eval, rng)
    pred = procedure.fit(sample.dataset).predict(sample.x0)
    return float(np.mean((pred - sample.target.data) ** 2) / dist.noise_sd ** 2)


def estimate_risk(procedure, prior_sampler: Callable[[np.random.Generator], SampledDistribution],
                  n: int, n_eval: int = 100, reps: int = 1000, seed: int = 0, threads: int = 1,
                  setting: str = "") -> RiskEstimate:
    """
    monte carlo estimate of the standardized mse risk

    args:
        procedure: object with fit(dataset) -> predictor with predict(x0)
        prior_sampler: callable drawing one distribution from an rng
        n: training sample size
        n_eval: evaluation points per replication
        reps: number of replications (at least 2)
        seed: root of the per-replication streams
        threads: worker threads
        setting: label stored on the result

    returns:
        RiskEstimate over the successful replications
    """
    if reps < 2:
        raise ValueError(f"reps must be at least 2, got {reps}")
    label = f"{getattr(procedure, 'name', 'procedure')} {setting}".strip()

    def run(index: int) -> Optional[float]:
        try:
            return replication_loss(procedure, prior_sampler, n, n_eval, replication_rng(seed, index))
        except REPLICATION_FAILURES as err:
            logger.warning("%s: replication %d failed: %s", label, index, err)
            return None

    losses, skipped = _collect(_parallel_map(run, range(reps), threads), reps, label)
    result = RiskEstimate.from_losses(losses, setting, skipped)
    logger.info("%s: risk %.4f (se %.4f, %d reps)", label, result.mean, result.std_error, result.n_replications)
    return result


# real data

def read_csv_dataset(path, outcome: str) -> Tuple[List[str], np.ndarray, np.ndarray]:
    """
    numeric csv with a header row -> (feature names, features, outcome)

    every cell must parse as a finite float; errors name the row (1-based,
    header is row 1) and column.
    """
    path = Path(path)
    with open(path, "r", newline="") as f:
        reader = csv.reader(f)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CSVFormatError(path, 1, "", "file is empty") from None
        if outcome not in header:
            raise CSVFormatError(path, 1, outcome, "outcome column not found in header")
        rows = []
        for row_number, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CSVFormatError(path, row_number, "", f"expected {len(header)} cells, found {len(row)}")
            values = []
            for name, cell in zip(header, row):
                try:
                    value = float(cell)
                except ValueError:
                    raise CSVFormatError(path, row_number, name, f"non-numeric cell '{cell}'") from None
                if not math.isfinite(value):
                    raise CSVFormatError(path, row_number, name, f"non-finite cell '{cell}'")
                values.append(value)
            rows.append(values)
    if not rows:
        raise CSVFormatError(path, 2, "", "no data rows")
    table = np.array(rows)
    out_idx = header.index(outcome)
    features = [h for i, h in enumerate(header) if i != out_idx]
    return features, np.delete(table, out_idx, axis=1), table[:, out_idx]


@dataclass
class NoisingDraw:
    """one replication of the feature-noising protocol"""
    features: np.ndarray
    x: np.ndarray
    train: np.ndarray
    test: np.ndarray


def noising_draw(x: np.ndarray, s: int, p_total: int, n_train: int, rng: np.random.Generator) -> NoisingDraw:
    """keep s random real features, append p_total - s gaussian noise columns, split rows"""
    rows = x.shape[0]
    chosen = rng.choice(x.shape[1], size=s, replace=False)
    noise = rng.standard_normal((rows, p_total - s))
    order = rng.permutation(rows)
    return NoisingDraw(chosen, np.hstack([x[:, chosen], noise]), order[:n_train], order[n_train:])


def feature_noising_harness(x: np.ndarray, y: np.ndarray, procedures: Dict[str, object], s: int,
                            p_total: int = 10, n_train: int = 100, reps: int = 200, seed: int = 0,
                            threads: int = 1, setting: str = "") -> Dict[str, RiskEstimate]:
    """
    raw test mse of each procedure over repeated feature-noising replications

    the mse is unstandardized since real data carry no known noise variance.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape[0] < n_train + 20:
        raise ValueError(f"need at least {n_train + 20} rows, got {x.shape[0]}")
    if not 1 <= s <= min(x.shape[1], p_total):
        raise ValueError(f"s must lie in [1, min(features={x.shape[1]}, p_total={p_total})], got {s}")
    if reps < 2:
        raise ValueError(f"reps must be at least 2, got {reps}")
    setting = setting or f"s={s}"

    def run(index: int) -> Dict[str, Optional[float]]:
        draw = noising_draw(x, s, p_total, n_train, replication_rng(seed, index))
        train = Dataset(draw.x[draw.train], y[draw.train])
        out = {}
        for name, proc in procedures.items():
            try:
                pred = proc.fit(train).predict(draw.x[draw.test])
                out[name] = float(np.mean((pred - y[draw.test]) ** 2))
            except REPLICATION_FAILURES as err:
                logger.warning("%s: replication %d failed: %s", name, index, err)
                out[name] = None
        return out

    outcomes = _parallel_map(run, range(reps), threads)
    results = {}
    for name in procedures:
        losses, skipped = _collect([o[name] for o in outcomes], reps, name)
        results[name] = RiskEstimate.from_losses(losses, setting, skipped)
    return results


def write_results_csv(path, rows: Sequence[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=RESULT_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in RESULT_COLUMNS})
    logger.info("wrote %d result rows to %s", len(rows), path)
    return path
