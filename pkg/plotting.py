"""
static svg plots of fitted component curves

for each active feature of a sampled distribution the fitted procedures
are evaluated on a grid over that feature with every other feature set to
zero, next to the true regression function on the same grid.
"""

import logging
from pathlib import Path
from typing import Dict, List, Mapping, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from core import Dataset  # noqa: E402
from generators import SampledDistribution  # noqa: E402

logger = logging.getLogger(__name__)

GRID_POINTS = 200


def active_features(dist: SampledDistribution) -> List[int]:
    """columns of x that the regression function depends on"""
    mu = dist.mu
    if hasattr(mu, "components"):
        count = len(mu.components)
    elif hasattr(mu, "active"):
        count = mu.active
    else:
        coords = np.flatnonzero(mu.beta.data)
        return sorted(int(dist.perm[j]) for j in coords)
    return sorted(int(dist.perm[j]) for j in range(count))


def fit_curves(fits: Mapping[str, object], dist: SampledDistribution, feature: int,
               bound: float, points: int = GRID_POINTS) -> Tuple[np.ndarray, np.ndarray, Dict[str, np.ndarray]]:
    """grid, true curve and each fit's curve along one feature"""
    grid = np.linspace(-bound, bound, points)
    x0 = np.zeros((points, dist.p))
    x0[:, feature] = grid
    truth = dist.regression(x0).data
    return grid, truth, {name: np.asarray(fit.predict(x0)) for name, fit in fits.items()}


def plot_fits(procedures: Mapping[str, object], dist: SampledDistribution, d: Dataset, path,
              title: str = "", bound: float = 2.5, points: int = GRID_POINTS) -> Path:
    """fit every procedure on d and write one panel per active feature to an svg file"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fits = {name: proc.fit(d) for name, proc in procedures.items()}
    features = active_features(dist) or [0]

    fig, axes = plt.subplots(1, len(features), figsize=(4.0 * len(features), 3.2), squeeze=False)
    for ax, feature in zip(axes[0], features):
        grid, truth, curves = fit_curves(fits, dist, feature, bound, points)
        ax.plot(grid, truth, color="black", linewidth=1.5, label="truth")
        for name, curve in curves.items():
            ax.plot(grid, curve, linewidth=1.0, label=name)
        ax.set_xlabel(f"x{feature + 1}")
        ax.grid(True, alpha=0.3)
    axes[0][0].legend(fontsize=7)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    logger.info("wrote fit plot %s", path)
    return path
