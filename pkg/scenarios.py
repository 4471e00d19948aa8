"""
fixed evaluation priors

linear: coefficients uniform on the l1 sphere of radius 5 in the first s
coordinates ('boundary'), the same shrunk by an independent Unif(0, 1)
factor ('interior'), or identically zero ('null').

flam: additive piecewise-constant regressions on independent
Unif(-2.5, 2.5) features. four scenario families each provide four
component shapes; 'dense' uses all four, 'sparse' one chosen uniformly at
random. active components are rescaled so their total variations sum to 10.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence

import numpy as np

from autodiff import Tensor
from generators import (COEFFICIENT_BOUND, TOTAL_VARIATION, FeaturePriorConfig, LinearRegression,
                        PriorGeneratorParams, SampledDistribution, sample_feature_prior)

logger = logging.getLogger(__name__)

FEATURE_BOUND = 2.5
LINEAR_VARIANTS = ("boundary", "interior", "null")
SCENARIOS = ("scenario1", "scenario2", "scenario3", "scenario4")
FLAM_MODES = ("sparse", "dense")

PriorSampler = Callable[[np.random.Generator], SampledDistribution]


@dataclass(frozen=True, eq=False)
class PiecewiseConstant:
    """f(x) = values[#{k : x >= knots[k]}] with strictly increasing knots"""
    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=np.float64).reshape(-1)
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if values.size != knots.size + 1:
            raise ValueError(f"need len(values) == len(knots) + 1, got {values.size} values and {knots.size} knots")
        if not (np.all(np.isfinite(knots)) and np.all(np.isfinite(values))):
            raise ValueError("scenario knots and values must be finite")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("scenario knots must be strictly increasing")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.values[np.searchsorted(self.knots, x, side="right")]

    def total_variation(self) -> float:
        return float(np.abs(np.diff(self.values)).sum())

    def scaled(self, factor: float) -> "PiecewiseConstant":
        return PiecewiseConstant(self.knots, factor * self.values)


class AdditiveRegression:
    """sum of piecewise-constant components applied to the leading coordinates"""

    def __init__(self, components: Sequence[PiecewiseConstant]):
        self.components = list(components)

    def __call__(self, z: np.ndarray) -> Tensor:
        z = np.asarray(z, dtype=np.float64)
        out = np.zeros(z.shape[0])
        for j, f in enumerate(self.components):
            out += f(z[:, j])
        return Tensor(out)

    def component_total_variation(self) -> np.ndarray:
        return np.array([f.total_variation() for f in self.components])


def normalize_total_variation(components: Sequence[PiecewiseConstant],
                              total: float = TOTAL_VARIATION) -> List[PiecewiseConstant]:
    current = sum(f.total_variation() for f in components)
    if current <= 0:
        raise ValueError("scenario components have zero total variation")
    return [f.scaled(total / current) for f in components]


def discretize(fn: Callable[[np.ndarray], np.ndarray], pieces: int = 100,
               bound: float = FEATURE_BOUND) -> PiecewiseConstant:
    """piecewise-constant version of fn on pieces equal cells of [-bound, bound]"""
    edges = np.linspace(-bound, bound, pieces + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    return PiecewiseConstant(edges[1:-1], fn(mids))


def _steps(knots, values) -> PiecewiseConstant:
    return PiecewiseConstant(np.array(knots, dtype=float), np.array(values, dtype=float))


def builtin_scenarios() -> Dict[str, List[PiecewiseConstant]]:
    """the four shape families: steps, smooth, mixed, locally bursty"""
    steps = [
        _steps([0.0], [-1.0, 1.0]),
        _steps([-1.5, 0.5], [0.0, 2.0, 0.5]),
        _steps([-1.0, 0.0, 1.0], [1.0, -1.0, 1.0, -1.0]),
        _steps([1.2], [0.0, 1.5]),
    ]
    smooth = [
        discretize(lambda x: np.sin(1.25 * x)),
        discretize(lambda x: 0.5 * x ** 2 - 1.0),
        discretize(lambda x: np.exp(-x ** 2)),
        discretize(lambda x: -np.cos(x)),
    ]
    mixed = [steps[0], smooth[0], steps[2], smooth[2]]
    bursty = [
        _steps([-0.3, 0.3], [0.0, 2.0, 0.0]),
        _steps([1.0, 1.4], [0.0, -1.5, 0.0]),
        discretize(lambda x: np.where(np.abs(x + 1.5) < 0.5, np.cos(np.pi * (x + 1.5)), 0.0)),
        _steps([-2.0, -1.8, 2.0, 2.2], [0.0, 1.0, 0.0, -1.0, 0.0]),
    ]
    return {"scenario1": steps, "scenario2": smooth, "scenario3": mixed, "scenario4": bursty}


def load_scenario_shapes(path) -> List[PiecewiseConstant]:
    """
    read a JSON list of {"knots": [...], "values": [...]} components

    values are validated and the components rescaled to total variation 10.
    """
    with open(Path(path), "r") as f:
        raw = json.load(f)
    if not isinstance(raw, list) or not raw:
        raise ValueError(f"{path}: expected a non-empty JSON list of components")
    components = []
    for i, entry in enumerate(raw):
        try:
            components.append(PiecewiseConstant(entry["knots"], entry["values"]))
        except (KeyError, TypeError, ValueError) as err:
            raise ValueError(f"{path}: component {i} is invalid: {err}") from err
    logger.info("loaded %d scenario components from %s", len(components), path)
    return normalize_total_variation(components)


# samplers

def sample_l1_sphere(rng: np.random.Generator, dim: int, radius: float) -> np.ndarray:
    """uniform draw from {a : ||a||_1 = radius}: dirichlet(1) magnitudes times random signs"""
    return radius * rng.dirichlet(np.ones(dim)) * rng.choice([-1.0, 1.0], size=dim)


def _linear_sampler(sparsity: int, variant: str, p: int) -> PriorSampler:
    config = FeaturePriorConfig(p)

    def sample(rng: np.random.Generator) -> SampledDistribution:
        sigma, chol = sample_feature_prior(config, rng)
        alpha = sample_l1_sphere(rng, sparsity, COEFFICIENT_BOUND)
        if variant == "interior":
            alpha = alpha * rng.uniform()
        elif variant == "null":
            alpha = np.zeros(sparsity)
        beta = np.concatenate([alpha, np.zeros(p - sparsity)])
        return SampledDistribution(sigma, chol, LinearRegression(beta), rng.permutation(p))

    return sample


def _flam_sampler(shapes: List[PiecewiseConstant], mode: str, p: int) -> PriorSampler:
    if len(shapes) > p:
        raise ValueError(f"scenario has {len(shapes)} components but only p={p} features")
    identity = np.eye(p)

    def sample(rng: np.random.Generator) -> SampledDistribution:
        if mode == "sparse":
            active = [shapes[rng.integers(len(shapes))]]
        else:
            active = list(shapes)
        mu = AdditiveRegression(normalize_total_variation(active))
        return SampledDistribution(identity, identity, mu, rng.permutation(p),
                                   features="uniform", feature_bound=FEATURE_BOUND)

    return sample


def parse_flam_variant(variant: str):
    """'scenario2-dense' -> ('scenario2', 'dense')"""
    scenario, _, mode = variant.partition("-")
    if scenario not in SCENARIOS or mode not in FLAM_MODES:
        raise ValueError(f"unknown flam variant '{variant}', expected <scenario1..4>-<sparse|dense>")
    return scenario, mode


def evaluation_prior(setting: str, sparsity: int, variant: str, p: int = 10,
                     shapes: Optional[List[PiecewiseConstant]] = None) -> PriorSampler:
    """
    sampler for one fixed evaluation prior

    args:
        setting: 'linear' or 'flam'
        sparsity: number of active coordinates (linear only)
        variant: boundary / interior / null (linear) or scenario<k>-<sparse|dense> (flam)
        p: total number of features
        shapes: components replacing the built-in shapes of the chosen scenario
    """
    if setting == "linear":
        if variant not in LINEAR_VARIANTS:
            raise ValueError(f"unknown linear variant '{variant}', expected one of {LINEAR_VARIANTS}")
        if not 1 <= sparsity <= p:
            raise ValueError(f"sparsity must lie in [1, p={p}], got {sparsity}")
        return _linear_sampler(sparsity, variant, p)
    if setting == "flam":
        scenario, mode = parse_flam_variant(variant)
        components = shapes if shapes is not None else builtin_scenarios()[scenario]
        return _flam_sampler(components, mode, p)
    raise ValueError(f"unknown setting '{setting}'")


def generator_prior(params: PriorGeneratorParams) -> PriorSampler:
    """a (trained) generator used as a fixed evaluation prior"""
    return lambda rng: params.sample_distribution(rng)


def evaluation_priors(setting: str, sparsity: int, variant: str, rng: np.random.Generator,
                      p: int = 10, shapes: Optional[List[PiecewiseConstant]] = None) -> Iterator[SampledDistribution]:
    """endless stream of draws from an evaluation prior"""
    sample = evaluation_prior(setting, sparsity, variant, p, shapes)
    while True:
        yield sample(rng)
