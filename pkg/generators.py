"""
prior generators for synthetic regression problems

every draw P from a prior is built in three steps: a feature correlation
matrix from the fixed wishart feature prior, a regression function from a
(possibly trainable) kernel, and a random feature permutation. data drawn
from P are differentiable in the generator weights through the regression
function, so the same code serves sampling and the prior-ascent step.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import numpy as np
import scipy.linalg

from autodiff import Tensor, absolute, concat, exp, leaves, matmul
from core import Dataset
from layers import apply_stack, init_stack, split_layers, stack_shapes, stack_widths

logger = logging.getLogger(__name__)

SETTINGS = ("linear", "flam")
COEFFICIENT_BOUND = 5.0
TOTAL_VARIATION = 10.0


class PriorSamplingError(RuntimeError):
    """raised when a prior draw stays degenerate after one resample"""


@dataclass(frozen=True)
class FeaturePriorConfig:
    p: int
    wishart_scale: float = 2.0
    wishart_df: int = 20

    def __post_init__(self):
        if self.p < 1:
            raise ValueError(f"p must be positive, got {self.p}")
        if self.wishart_df < self.p:
            raise ValueError(f"wishart_df ({self.wishart_df}) must be at least p ({self.p})")
        if self.wishart_scale <= 0:
            raise ValueError(f"wishart_scale must be positive, got {self.wishart_scale}")


def sample_wishart(config: FeaturePriorConfig, rng: np.random.Generator) -> np.ndarray:
    """
    bartlett decomposition of Wishart(scale * I, df)

    W = L A A^T L^T with L = sqrt(scale) I, A lower triangular, A_ii ~ chi(df - i)
    and standard normal entries below the diagonal.
    """
    p, df = config.p, config.wishart_df
    a = np.zeros((p, p))
    a[np.diag_indices(p)] = np.sqrt(rng.chisquare(df - np.arange(p)))
    rows, cols = np.tril_indices(p, k=-1)
    a[rows, cols] = rng.standard_normal(rows.size)
    return config.wishart_scale * (a @ a.T)


def correlation_from_wishart(w: np.ndarray) -> np.ndarray:
    """diag(W^-1)^(-1/2) W^-1 diag(W^-1)^(-1/2), symmetrized with an exact unit diagonal"""
    inv = scipy.linalg.cho_solve(scipy.linalg.cho_factor(w, lower=True), np.eye(w.shape[0]))
    scale = 1.0 / np.sqrt(np.diag(inv))
    sigma = scale[:, None] * inv * scale[None, :]
    sigma = 0.5 * (sigma + sigma.T)
    np.fill_diagonal(sigma, 1.0)
    return sigma


def sample_feature_prior(config: FeaturePriorConfig, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """draw (sigma, lower cholesky factor of sigma) from the feature prior"""
    for attempt in range(2):
        try:
            sigma = correlation_from_wishart(sample_wishart(config, rng))
            return sigma, scipy.linalg.cholesky(sigma, lower=True)
        except scipy.linalg.LinAlgError:
            logger.warning("feature prior draw was numerically indefinite (attempt %d), resampling", attempt + 1)
    raise PriorSamplingError(f"feature prior with p={config.p} failed cholesky twice in a row")


# regression functions; each maps (m, p) points in permuted coordinates to an (m,) tensor

class LinearRegression:
    def __init__(self, beta: Tensor):
        self.beta = beta if isinstance(beta, Tensor) else Tensor(beta)

    def __call__(self, z: np.ndarray) -> Tensor:
        z = np.asarray(z, dtype=np.float64)
        return matmul(Tensor(z), self.beta.reshape(-1, 1)).reshape(z.shape[0])


class StepRegression:
    """
    additive piecewise-constant function of the first s coordinates

    component j jumps by jumps[k, j] at knots[k, j], so its total variation
    is the sum of the absolute jumps in column j.
    """

    def __init__(self, knots: np.ndarray, jumps: Tensor):
        self.knots = np.asarray(knots, dtype=np.float64)
        self.jumps = jumps if isinstance(jumps, Tensor) else Tensor(jumps)
        if self.knots.shape != self.jumps.shape:
            raise ValueError(f"knots {self.knots.shape} and jumps {self.jumps.shape} must have the same shape")

    @property
    def active(self) -> int:
        return self.knots.shape[1]

    def __call__(self, z: np.ndarray) -> Tensor:
        z = np.asarray(z, dtype=np.float64)
        count, width = self.knots.shape
        above = (z[:, None, :width] >= self.knots[None, :, :]).astype(np.float64)
        flat = matmul(Tensor(above.reshape(z.shape[0], count * width)),
                      self.jumps.reshape(count * width, 1))
        return flat.reshape(z.shape[0])

    def component_total_variation(self) -> np.ndarray:
        return np.abs(self.jumps.data).sum(axis=0)


@dataclass
class SampledDistribution:
    """
    one data-generating distribution P

    features are N(0, sigma) (or independent uniforms on [-bound, bound] for
    the additive evaluation scenarios); outcomes are mu(x[perm]) plus
    N(0, noise_sd^2) noise.
    """
    sigma: np.ndarray
    sigma_chol: np.ndarray
    mu: object
    perm: np.ndarray
    noise_sd: float = 1.0
    features: str = "gaussian"
    feature_bound: float = 2.5

    @property
    def p(self) -> int:
        return self.sigma.shape[0]

    @property
    def perm_matrix(self) -> np.ndarray:
        return np.eye(self.p)[self.perm]

    def regression(self, x: np.ndarray) -> Tensor:
        """mu_P(x) = mu(perm x) at each row of x"""
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.p)
        return self.mu(x[:, self.perm])

    def sample_features(self, rng: np.random.Generator, count: int) -> np.ndarray:
        if self.features == "uniform":
            return rng.uniform(-self.feature_bound, self.feature_bound, size=(count, self.p))
        return rng.standard_normal((count, self.p)) @ self.sigma_chol.T


@dataclass
class SyntheticSample:
    """a training dataset plus noiseless targets at fresh evaluation points"""
    x: np.ndarray
    y: Tensor
    x0: np.ndarray
    target: Tensor

    @property
    def dataset(self) -> Dataset:
        return Dataset(self.x, self.y.data)


def sample_dataset(dist: SampledDistribution, n: int, n_eval: int, rng: np.random.Generator) -> SyntheticSample:
    """
    draw n observations and n_eval evaluation points from dist

    targets are mu_P at the evaluation points without noise.
    """
    if n < 2:
        raise ValueError(f"need n >= 2 observations, got {n}")
    x = dist.sample_features(rng, n)
    noise = dist.noise_sd * rng.standard_normal(n)
    x0 = dist.sample_features(rng, n_eval)
    return SyntheticSample(x=x, y=dist.regression(x) + noise, x0=x0, target=dist.regression(x0))


# trainable generators

@dataclass
class PriorGeneratorParams:
    """
    weights of the generator network G plus the fixed parts of the prior

    linear: G maps each noise coordinate to a logit (a perceptron when
    sparsity is 1, mean-pooled deep-set layers over the s inputs otherwise)
    and coefficients are U0 * softmax(logits).
    flam: G maps R^(s+2) to R^s and |G| gives jump magnitudes.
    """
    setting: str
    sparsity: int
    p: int
    weights: Dict[str, np.ndarray] = field(default_factory=dict)
    knots: int = 500
    hidden_width: int = 40
    hidden_layers: int = 4
    random_permutation: bool = True
    feature_prior: Optional[FeaturePriorConfig] = None

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ValueError(f"unknown setting '{self.setting}', expected one of {SETTINGS}")
        if not 1 <= self.sparsity <= self.p:
            raise ValueError(f"sparsity must lie in [1, p={self.p}], got {self.sparsity}")
        if self.knots < 1:
            raise ValueError(f"knots must be positive, got {self.knots}")
        if self.feature_prior is None:
            self.feature_prior = FeaturePriorConfig(self.p)

    def layout(self) -> Tuple[str, list]:
        s = self.sparsity
        if self.setting == "flam":
            return "dense", stack_widths(s + 2, self.hidden_layers, self.hidden_width, s)
        kind = "dense" if s == 1 else "deep_set"
        return kind, stack_widths(1, self.hidden_layers, self.hidden_width, 1)

    def expected_shapes(self) -> Dict[str, tuple]:
        return stack_shapes("g", *self.layout())

    def leaves(self, requires_grad: bool = True) -> Dict[str, Tensor]:
        return leaves(self.weights, requires_grad)

    def copy(self) -> "PriorGeneratorParams":
        return PriorGeneratorParams(self.setting, self.sparsity, self.p,
                                    {k: v.copy() for k, v in self.weights.items()},
                                    self.knots, self.hidden_width, self.hidden_layers,
                                    self.random_permutation, self.feature_prior)

    def sample_distribution(self, rng: np.random.Generator,
                            weights: Optional[Mapping[str, Tensor]] = None) -> SampledDistribution:
        return sample_distribution(self, rng, weights)

    def describe(self) -> dict:
        return {"setting": self.setting, "sparsity": self.sparsity, "p": self.p, "knots": self.knots,
                "hidden_width": self.hidden_width, "hidden_layers": self.hidden_layers,
                "random_permutation": self.random_permutation}


def init_generator(setting: str, sparsity: int, p: int, seed: int, **options) -> PriorGeneratorParams:
    """glorot-initialized generator for the given setting"""
    params = PriorGeneratorParams(setting, sparsity, p, **options)
    kind, widths = params.layout()
    params.weights = init_stack("g", kind, widths, np.random.default_rng(seed))
    return params


def apply_generator(params: PriorGeneratorParams, weights: Mapping[str, Tensor], u: np.ndarray) -> Tensor:
    """G(u) with identity output activation"""
    kind, _ = params.layout()
    stack = split_layers(weights, "g")
    if params.setting == "flam":
        return apply_stack(Tensor(u), kind, stack, activate_last=False)
    s = params.sparsity
    return apply_stack(Tensor(np.reshape(u, (s, 1))), kind, stack, activate_last=False).reshape(s)


def _weights_or_constants(params: PriorGeneratorParams, weights: Optional[Mapping[str, Tensor]]):
    return params.leaves(requires_grad=False) if weights is None else weights


def sample_regression_linear(params: PriorGeneratorParams, rng: np.random.Generator,
                             weights: Optional[Mapping[str, Tensor]] = None,
                             noise: Optional[dict] = None) -> Tuple[Tensor, dict]:
    """
    coefficients beta = U0 * softmax(G(U_1), ..., G(U_s)), zero-padded to p

    args:
        params: linear generator
        rng: source of (U0, U) unless noise is given
        weights: tensors to differentiate through (defaults to constants)
        noise: a record returned by an earlier call, to replay the same draw

    returns:
        (beta tensor of length p, noise record)
    """
    if params.setting != "linear":
        raise ValueError(f"linear sampler called with a '{params.setting}' generator")
    if noise is None:
        noise = {"u0": float(rng.uniform(-COEFFICIENT_BOUND, COEFFICIENT_BOUND)),
                 "u": rng.standard_normal(params.sparsity)}
    logits = apply_generator(params, _weights_or_constants(params, weights), noise["u"])
    # shifting logits by a constant leaves softmax unchanged
    e = exp(logits - float(logits.data.max()))
    share = e / e.sum()
    beta = concat([share * noise["u0"], Tensor(np.zeros(params.p - params.sparsity))], axis=0)
    return beta, noise


def sample_regression_flam(params: PriorGeneratorParams, sigma_chol: np.ndarray, rng: np.random.Generator,
                           weights: Optional[Mapping[str, Tensor]] = None,
                           noise: Optional[dict] = None) -> Tuple[StepRegression, dict]:
    """
    additive step function with total variation exactly TOTAL_VARIATION

    knots are draws from the feature distribution, jump signs are rademacher
    and magnitudes are |G(U_k)| divided by their total c.
    """
    if params.setting != "flam":
        raise ValueError(f"flam sampler called with a '{params.setting}' generator")
    s, count = params.sparsity, params.knots
    if noise is None:
        knots = rng.standard_normal((count, params.p)) @ np.asarray(sigma_chol).T
        noise = {"knots": knots[:, :s],
                 "signs": rng.choice([-1.0, 1.0], size=(count, s)),
                 "u": rng.standard_normal((count, s + 2))}
    w = _weights_or_constants(params, weights)

    for attempt in range(2):
        magnitudes = absolute(apply_generator(params, w, noise["u"]))
        total = magnitudes.sum()
        if total.item() > 0:
            break
        logger.warning("generator returned all-zero jump magnitudes (attempt %d), redrawing noise", attempt + 1)
        noise = dict(noise, u=rng.standard_normal((count, s + 2)))
    else:
        raise PriorSamplingError("generator jump magnitudes summed to zero twice in a row")

    jumps = magnitudes * noise["signs"] * TOTAL_VARIATION / total
    return StepRegression(noise["knots"], jumps), noise


def sample_distribution(params: PriorGeneratorParams, rng: np.random.Generator,
                        weights: Optional[Mapping[str, Tensor]] = None) -> SampledDistribution:
    """draw P: correlation matrix, regression function, then feature permutation"""
    sigma, chol = sample_feature_prior(params.feature_prior, rng)
    if params.setting == "linear":
        beta, _ = sample_regression_linear(params, rng, weights)
        mu = LinearRegression(beta)
    else:
        mu, _ = sample_regression_flam(params, chol, rng, weights)
    perm = rng.permutation(params.p)
    if not params.random_permutation:
        perm = np.arange(params.p)
    return SampledDistribution(sigma=sigma, sigma_chol=chol, mu=mu, perm=perm)

