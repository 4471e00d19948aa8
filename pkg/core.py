"""
core data structures for meta-learned regression

implements the dataset and standardized-statistic types fed to estimators,
plus the shared preprocessing helpers
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np


class Dataset:
    """
    labeled regression data d = (x, y)

    x is an n x p feature matrix, y an n-vector of outcomes; n >= 2, p >= 1
    and every entry finite.
    """

    def __init__(self, x, y):
        """
        initialize a dataset

        args:
            x: n x p array-like of features
            y: length-n array-like of outcomes
        """
        self.x = np.array(x, dtype=np.float64)
        self.y = np.array(y, dtype=np.float64).reshape(-1)

        if self.x.ndim == 1:
            self.x = self.x.reshape(-1, 1)
        if self.x.ndim != 2:
            raise ValueError(f"features must be a matrix, got shape {self.x.shape}")
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError(
                f"features have {self.x.shape[0]} rows but outcomes have {self.y.shape[0]} entries"
            )
        if self.n < 2 or self.p < 1:
            raise ValueError(f"need n >= 2 and p >= 1, got n={self.n}, p={self.p}")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError("dataset entries must be finite")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def subset(self, rows) -> "Dataset":
        """dataset restricted to the given row indices"""
        return Dataset(self.x[rows], self.y[rows])

    def with_outcome(self, y) -> "Dataset":
        return Dataset(self.x, y)

    def __repr__(self) -> str:
        return f"Dataset(n={self.n}, p={self.p})"


@dataclass(frozen=True)
class ZStatistic:
    """
    standardized representation z(d, x0)

    (x, y, x0) is recoverable from the fields, see ZStatistic.restore.
    """
    x_std: np.ndarray
    y_std: np.ndarray
    x0_std: np.ndarray
    x_bar: np.ndarray
    y_bar: float
    s_x: np.ndarray
    s_y: float

    def restore(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """invert the standardization: returns (x, y, x0)"""
        x = self.x_bar + self.s_x * self.x_std
        y = self.y_bar + self.s_y * self.y_std
        x0 = self.x_bar + self.s_x * self.x0_std
        return x, y, x0


def safe_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    """num / den with the convention 0/0 = 0 wherever den == 0"""
    den = np.asarray(den, dtype=np.float64)
    return np.where(den == 0, 0.0, num / np.where(den == 0, 1.0, den))


def standardize(d: Dataset, x0) -> ZStatistic:
    """
    standardize features and outcome with population (divide-by-n) moments

    degenerate columns follow the 0/0 = 0 convention, so a constant feature
    column becomes identically zero in x_std and x0_std.
    """
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
    if x0.shape[0] != d.p:
        raise ValueError(f"evaluation point has {x0.shape[0]} features, dataset has {d.p}")

    x_bar = d.x.mean(axis=0)
    s_x = np.sqrt(((d.x - x_bar) ** 2).mean(axis=0))
    y_bar = float(d.y.mean())
    s_y = float(np.sqrt(((d.y - y_bar) ** 2).mean()))

    return ZStatistic(
        x_std=safe_ratio(d.x - x_bar, s_x),
        y_std=safe_ratio(d.y - y_bar, s_y),
        x0_std=safe_ratio(x0 - x_bar, s_x),
        x_bar=x_bar,
        y_bar=y_bar,
        s_x=s_x,
        s_y=s_y,
    )


def rank_preprocess(d: Dataset, x0) -> Tuple[Dataset, np.ndarray]:
    """
    replace features by rank statistics among the n observations

    x_ij -> #{k : x_ij >= x_kj} and x0_j -> #{k : x0_j >= x_kj}; ties count
    every tied observation. x0 may carry one point (p,) or several (m, p).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    ranked_x = rank_against(d.x, d.x)
    ranked_x0 = rank_against(d.x, x0.reshape(-1, d.p)).reshape(x0.shape)
    return Dataset(ranked_x, d.y), ranked_x0


def rank_against(reference: np.ndarray, points: np.ndarray) -> np.ndarray:
    """
    column-wise weak rank of each row of points among the rows of reference

    works on trailing (n, p) / (m, p) axes with any leading batch axes.
    """
    ref = np.sort(reference, axis=-2)
    out = np.empty(points.shape, dtype=np.float64)
    for j in range(reference.shape[-1]):
        col = ref[..., :, j]
        vals = points[..., :, j]
        if col.ndim == 1:
            out[..., :, j] = np.searchsorted(col, vals, side="right")
        else:
            flat_ref = col.reshape(-1, col.shape[-1])
            flat_val = vals.reshape(-1, vals.shape[-1])
            ranks = np.stack([np.searchsorted(r, v, side="right") for r, v in zip(flat_ref, flat_val)])
            out[..., :, j] = ranks.reshape(vals.shape)
    return out


# helper functions

def tree_sum(values: Sequence):
    """
    pairwise (tree) summation

    the result does not depend on how values were split across workers as long
    as their order is kept, and rounding grows with log(len) instead of len.
    """
    items: List = list(values)
    if not items:
        return 0.0
    while len(items) > 1:
        paired = [items[i] + items[i + 1] for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            paired.append(items[-1])
        items = paired
    return items[0]
