"""
least-squares solvers used by the baselines

nnls_active_set: Lawson-Hanson active set method for min ||y - A w|| s.t. w >= 0
lasso_coordinate_descent: cyclic coordinate descent for
    (1 / 2n) ||y - X b||^2 + lam ||b||_1
"""

import logging
from typing import Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    """raised when an iterative solver hits its iteration limit"""


def nnls_active_set(a: np.ndarray, y: np.ndarray, tol: float = 1e-8,
                    max_iter: Optional[int] = None) -> np.ndarray:
    """
    non-negative least squares by the Lawson-Hanson active set method

    args:
        a: m x k design
        y: length-m response
        tol: KKT tolerance on the gradient of the inactive coordinates,
            relative to max(1, max |a^T y|)
        max_iter: limit on outer iterations (default 3k)

    returns:
        length-k non-negative solution
    """
    a = np.asarray(a, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if a.ndim != 2 or a.shape[0] != y.shape[0]:
        raise ValueError(f"nnls: design {a.shape} does not match response {y.shape}")
    k = a.shape[1]
    max_iter = 3 * k if max_iter is None else max_iter
    scale = max(1.0, float(np.abs(a.T @ y).max(initial=0.0)))

    x = np.zeros(k)
    passive = np.zeros(k, dtype=bool)
    w = a.T @ (y - a @ x)

    for iteration in range(max_iter + 1):
        # KKT: every inactive coordinate has non-positive gradient
        if passive.all() or w[~passive].max() <= tol * scale:
            return x
        if iteration == max_iter:
            break
        j = int(np.argmax(np.where(passive, -np.inf, w)))
        passive[j] = True

        while True:
            s = np.zeros(k)
            if passive.any():
                s[passive] = np.linalg.lstsq(a[:, passive], y, rcond=None)[0]
            if not passive.any() or s[passive].min() > 0:
                break
            x, passive = step_back(x, s, passive)
        x = s
        w = a.T @ (y - a @ x)

    raise ConvergenceError(f"nnls active set did not converge in {max_iter} iterations")


def step_back(x: np.ndarray, s: np.ndarray, passive: np.ndarray):
    """
    move from x towards the unconstrained solve s until the first passive
    coordinate hits zero, then drop every passive coordinate at zero

    coordinates with x == s contribute no ratio; when none block, the step
    is the full move to s.
    """
    gap = x - s
    blocking = passive & (s <= 0) & (gap > 0)
    if blocking.any():
        ratios = np.full(x.shape, np.inf)
        ratios[blocking] = x[blocking] / gap[blocking]
        first = int(np.argmin(ratios))
        x = x + ratios[first] * (s - x)
        x[first] = 0.0
    else:
        x = s.copy()
    passive = passive & (x > 0)
    x[~passive] = 0.0
    return x, passive


def soft_threshold(value, threshold):
    return np.sign(value) * np.maximum(np.abs(value) - threshold, 0.0)


def lasso_coordinate_descent(x: np.ndarray, y: np.ndarray, lam: float, beta0: Optional[np.ndarray] = None,
                             tol: float = 1e-7, max_sweeps: int = 100_000) -> np.ndarray:
    """
    minimize (1 / 2n) ||y - x b||^2 + lam ||b||_1 over b (no intercept)

    stops when the largest coefficient change in a full sweep is at most tol
    times the root mean square of y, so rescaling y rescales every iterate and
    leaves the stopping sweep unchanged.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n, p = x.shape
    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=np.float64)
    col_sq = (x * x).sum(axis=0) / n
    residual = y - x @ beta
    threshold = tol * float(np.sqrt(np.mean(y * y)))

    for sweep in range(max_sweeps):
        largest = 0.0
        for j in range(p):
            if col_sq[j] == 0.0:
                continue
            old = beta[j]
            rho = x[:, j] @ residual / n + col_sq[j] * old
            beta[j] = soft_threshold(rho, lam) / col_sq[j]
            if beta[j] != old:
                residual -= x[:, j] * (beta[j] - old)
                largest = max(largest, abs(beta[j] - old))
        if largest <= threshold:
            return beta
    raise ConvergenceError(f"lasso coordinate descent did not converge in {max_sweeps} sweeps (lam={lam})")


def lasso_path(x: np.ndarray, y: np.ndarray, lambdas: Sequence[float], tol: float = 1e-7,
               max_sweeps: int = 100_000) -> np.ndarray:
    """coefficients for each penalty in lambdas (in the given order), warm-started"""
    beta = np.zeros(np.asarray(x).shape[1])
    path = []
    for lam in lambdas:
        beta = lasso_coordinate_descent(x, y, lam, beta, tol, max_sweeps)
        path.append(beta.copy())
    return np.array(path)


def lambda_max(x: np.ndarray, y: np.ndarray) -> float:
    """smallest penalty with an all-zero solution for centered x and y"""
    return float(np.abs(x.T @ y).max() / x.shape[0])


def lambda_grid(lam_max: float, count: int = 100, ratio: float = 1e-3) -> np.ndarray:
    """geometric grid from lam_max down to ratio * lam_max"""
    return lam_max * np.logspace(0.0, np.log10(ratio), count)
