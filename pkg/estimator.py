"""
equivariant prediction network

forward() runs the four-module architecture on a batch of datasets:
standardize, exchangeable layers over (n, p), mean-pool over observations,
deep-set layers over features, append the standardized evaluation point,
deep-set layers again, mean-pool over features, dense layers, and finally
rescale by the outcome mean and standard deviation. the result is invariant
to permutations of observations and features and to feature shifts and
positive rescalings, and equivariant to outcome shifts and positive
rescalings, whatever the weights.
"""

import logging
from dataclasses import dataclass, field, fields
from typing import Dict, List, Mapping, Optional, Union

import numpy as np

from autodiff import Tensor, concat, leaves, mean_axis, no_tape, sqrt, square
from core import Dataset, rank_against, safe_ratio
from layers import apply_stack, init_stack, split_layers, stack_shapes, stack_widths

logger = logging.getLogger(__name__)


class NonFiniteError(FloatingPointError):
    """raised when a module produces nan or inf"""

    def __init__(self, module: int):
        super().__init__(f"non-finite values in the output of module {module}")
        self.module = module


@dataclass(frozen=True)
class ArchitectureConfig:
    o1: int = 50
    o2: int = 50
    o3: int = 10
    h1: int = 10
    h2: int = 3
    h3: int = 10
    h4: int = 3
    w1: int = 100
    w2: int = 100
    w3: int = 100
    w4: int = 100
    rank_preprocess: bool = False

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "rank_preprocess":
                continue
            if f.name.startswith("h") and value < 0:
                raise ValueError(f"{f.name} must be non-negative, got {value}")
            if not f.name.startswith("h") and value < 1:
                raise ValueError(f"{f.name} must be positive, got {value}")

    @classmethod
    def uniform(cls, width: int, depth: int, outputs: Optional[int] = None,
                rank_preprocess: bool = False) -> "ArchitectureConfig":
        """same width and hidden depth for every module (handy for small networks)"""
        out = width if outputs is None else outputs
        return cls(o1=out, o2=out, o3=out, h1=depth, h2=depth, h3=depth, h4=depth,
                   w1=width, w2=width, w3=width, w4=width, rank_preprocess=rank_preprocess)

    def module_layout(self) -> Dict[int, tuple]:
        """module index -> (layer kind, channel widths)"""
        return {
            1: ("exchangeable", stack_widths(2, self.h1, self.w1, self.o1)),
            2: ("deep_set", stack_widths(self.o1, self.h2, self.w2, self.o2)),
            3: ("deep_set", stack_widths(self.o2 + 1, self.h3, self.w3, self.o3)),
            4: ("dense", stack_widths(self.o3, self.h4, self.w4, 1)),
        }

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class EstimatorParams:
    """
    weights of the four modules keyed 'm<module>.<layer>.<key>'

    module 1 layers hold w_id, w_row, w_col, w_all, b; modules 2 and 3 hold
    lam, gam, b; module 4 holds w, b.
    """
    config: ArchitectureConfig
    weights: Dict[str, np.ndarray] = field(default_factory=dict)

    def module(self, k: int) -> List[Dict[str, np.ndarray]]:
        return group_layers(self.weights, k)

    def expected_shapes(self) -> Dict[str, tuple]:
        return expected_shapes(self.config)

    def leaves(self, requires_grad: bool = True) -> Dict[str, Tensor]:
        return leaves(self.weights, requires_grad)

    def copy(self) -> "EstimatorParams":
        return EstimatorParams(self.config, {k: v.copy() for k, v in self.weights.items()})

    @property
    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.weights.values()))

    def forward(self, weights: Mapping[str, Tensor], x: np.ndarray, y, x0: np.ndarray) -> Tensor:
        return forward(weights, self.config, x, y, x0)


def expected_shapes(config: ArchitectureConfig) -> Dict[str, tuple]:
    shapes = {}
    for k, (kind, widths) in config.module_layout().items():
        shapes.update(stack_shapes(f"m{k}", kind, widths))
    return shapes


def group_layers(weights: Mapping[str, object], k: int) -> List[Dict[str, object]]:
    """per-layer weight dicts of module k"""
    return split_layers(weights, f"m{k}")


def init_params(config: ArchitectureConfig, seed: int) -> EstimatorParams:
    """glorot-uniform mixing matrices and zero biases, deterministic in seed"""
    rng = np.random.default_rng(seed)
    weights: Dict[str, np.ndarray] = {}
    for k, (kind, widths) in config.module_layout().items():
        weights.update(init_stack(f"m{k}", kind, widths, rng))
    return EstimatorParams(config, weights)


def _check_finite(v: Tensor, module: int) -> None:
    if not np.all(np.isfinite(v.data)):
        raise NonFiniteError(module)


def standardize_outcome(y: Tensor):
    """differentiable (y_bar, s_y, y_std) over the last axis with 0/0 = 0"""
    y_bar = mean_axis(y, axis=-1, keepdims=True)
    centered = y - y_bar
    s_y = sqrt(mean_axis(square(centered), axis=-1, keepdims=True))
    guard = (s_y.data == 0).astype(np.float64)
    return y_bar, s_y, centered / (s_y + guard)


def forward(weights: Mapping[str, Tensor], config: ArchitectureConfig,
            x: np.ndarray, y, x0: np.ndarray) -> Tensor:
    """
    batched prediction

    args:
        weights: named parameter tensors (leaves or constants)
        config: architecture of the weights
        x: (B, n, p) features
        y: (B, n) outcomes, a Tensor when gradients must reach the data
        x0: (B, m, p) evaluation points

    returns:
        (B, m) tensor of predictions
    """
    x = np.asarray(x, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    y = y if isinstance(y, Tensor) else Tensor(y)
    if x.ndim != 3 or y.shape != x.shape[:2] or x0.ndim != 3 or x0.shape[::2] != x.shape[::2]:
        raise ValueError(f"forward expects x (B,n,p), y (B,n), x0 (B,m,p); got {x.shape}, {y.shape}, {x0.shape}")
    batch, n, p = x.shape
    m = x0.shape[1]

    if config.rank_preprocess:
        x, x0 = rank_against(x, x), rank_against(x, x0)

    x_bar = x.mean(axis=1, keepdims=True)
    s_x = np.sqrt(((x - x_bar) ** 2).mean(axis=1, keepdims=True))
    x_std = safe_ratio(x - x_bar, s_x)
    x0_std = safe_ratio(x0 - x_bar, s_x)
    y_bar, s_y, y_std = standardize_outcome(y)

    # d0 channels: standardized features, standardized outcome repeated over features
    y_channel = y_std.reshape(batch, n, 1, 1).repeat(p, axis=2)
    d0 = concat([Tensor(x_std[..., None]), y_channel], axis=-1)

    d1 = apply_stack(d0, "exchangeable", group_layers(weights, 1))
    _check_finite(d1, 1)
    d2 = apply_stack(mean_axis(d1, axis=-3), "deep_set", group_layers(weights, 2))
    _check_finite(d2, 2)

    o2 = d2.shape[-1]
    augmented = concat([d2.reshape(batch, 1, p, o2).repeat(m, axis=1),
                        Tensor(x0_std[..., None])], axis=-1)
    d3 = apply_stack(augmented, "deep_set", group_layers(weights, 3))
    _check_finite(d3, 3)
    d4 = apply_stack(mean_axis(d3, axis=-2), "dense", group_layers(weights, 4))
    _check_finite(d4, 4)

    return y_bar + s_y * d4.reshape(batch, m)


def predict_many(params: EstimatorParams, d: Dataset, x0) -> np.ndarray:
    """predictions at each row of x0 (m, p) from one dataset"""
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1, d.p)
    with no_tape():
        out = forward(params.leaves(requires_grad=False), params.config,
                      d.x[None], d.y[None], x0[None])
    return out.data[0]


def predict(params: EstimatorParams, d: Dataset, x0) -> float:
    """prediction T(d)(x0) at a single p-vector x0"""
    return float(predict_many(params, d, np.asarray(x0).reshape(1, -1))[0])


class MeanEstimator:
    """T(d)(x0) = mean(y); no trainable weights"""

    def __init__(self):
        self.weights: Dict[str, np.ndarray] = {}

    def forward(self, weights: Mapping[str, Tensor], x: np.ndarray, y, x0: np.ndarray) -> Tensor:
        y = y if isinstance(y, Tensor) else Tensor(y)
        m = np.asarray(x0).shape[1]
        return mean_axis(y, axis=-1, keepdims=True).repeat(m, axis=-1)


# procedures: objects with fit(dataset) -> fitted predictor exposing predict(x0)

class _NetworkFit:
    def __init__(self, params: EstimatorParams, d: Dataset):
        self.params = params
        self.dataset = d

    def predict(self, x0) -> np.ndarray:
        return predict_many(self.params, self.dataset, x0)


class EquivariantProcedure:
    """wraps trained network weights as a fit/predict procedure"""

    def __init__(self, params: EstimatorParams, name: str = "amc"):
        self.params = params
        self.name = name

    def fit(self, d: Dataset) -> _NetworkFit:
        return _NetworkFit(self.params, d)


class _SymmetrizedFit:
    def __init__(self, plus, minus):
        self.plus = plus
        self.minus = minus

    def predict(self, x0) -> np.ndarray:
        return 0.5 * (self.plus.predict(x0) - self.minus.predict(x0))


class SymmetrizedProcedure:
    """odd-in-outcome part: 1/2 [T(x, y)(x0) - T(x, -y)(x0)]"""

    def __init__(self, base):
        self.base = base
        self.name = f"{getattr(base, 'name', 'estimator')}-sym"

    def fit(self, d: Dataset) -> _SymmetrizedFit:
        return _SymmetrizedFit(self.base.fit(d), self.base.fit(d.with_outcome(-d.y)))


def symmetrize(target: Union[EstimatorParams, object]) -> SymmetrizedProcedure:
    """symmetrized procedure from network weights or from any procedure"""
    if isinstance(target, EstimatorParams):
        target = EquivariantProcedure(target)
    return SymmetrizedProcedure(target)
