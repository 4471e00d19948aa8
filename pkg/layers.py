"""
equivariant linear layers

exchangeable-matrix layers act on (..., n, p, k) arrays and commute with
row and column permutations; deep-set layers act on (..., p, k) arrays and
commute with permutations of the p elements. every pool is a mean, so the
same weights apply to any n and p.
"""

from typing import Dict, List, Mapping

import numpy as np

from autodiff import ShapeError, Tensor, leaky_relu, matmul, mean_axis

LayerWeights = Mapping[str, Tensor]

EXCHANGEABLE_KEYS = ("w_id", "w_row", "w_col", "w_all", "b")
DEEP_SET_KEYS = ("lam", "gam", "b")
DENSE_KEYS = ("w", "b")


def _check_channels(op: str, v: Tensor, w: Tensor, min_ndim: int) -> None:
    if v.ndim < min_ndim:
        raise ShapeError(f"{op}: expected at least {min_ndim} dimensions, got shape {v.shape}")
    if w.shape[0] != v.shape[-1]:
        raise ShapeError(f"{op}: input has {v.shape[-1]} channels but weights {w.shape} expect {w.shape[0]}")


def exchangeable_matrix_layer(v: Tensor, weights: LayerWeights) -> Tensor:
    """
    pre-activation output of one exchangeable-matrix layer

    out = v W_id + rowmean(v) W_row + colmean(v) W_col + mean(v) W_all + b,
    where rowmean pools over observations (axis -3) and colmean over
    features (axis -2); pooled terms broadcast back over the pooled axes.
    """
    _check_channels("exchangeable_matrix_layer", v, weights["w_id"], 3)
    pooled_obs = mean_axis(v, axis=-3, keepdims=True)
    pooled_feat = mean_axis(v, axis=-2, keepdims=True)
    pooled_all = mean_axis(v, axis=(-3, -2), keepdims=True)
    return (matmul(v, weights["w_id"])
            + matmul(pooled_obs, weights["w_row"])
            + matmul(pooled_feat, weights["w_col"])
            + matmul(pooled_all, weights["w_all"])
            + weights["b"])


def deep_set_layer(v: Tensor, weights: LayerWeights) -> Tensor:
    """pre-activation output v Lam + mean_p(v) Gam + b of one mean-pooled deep-set layer"""
    _check_channels("deep_set_layer", v, weights["lam"], 2)
    pooled = mean_axis(v, axis=-2, keepdims=True)
    return matmul(v, weights["lam"]) + matmul(pooled, weights["gam"]) + weights["b"]


def dense_layer(v: Tensor, weights: LayerWeights) -> Tensor:
    _check_channels("dense_layer", v, weights["w"], 1)
    if v.ndim == 1:
        v = v.reshape(1, -1)
        return (matmul(v, weights["w"]) + weights["b"]).reshape(-1)
    return matmul(v, weights["w"]) + weights["b"]


LAYER_FUNCTIONS = {
    "exchangeable": exchangeable_matrix_layer,
    "deep_set": deep_set_layer,
    "dense": dense_layer,
}

LAYER_KEYS = {
    "exchangeable": EXCHANGEABLE_KEYS,
    "deep_set": DEEP_SET_KEYS,
    "dense": DENSE_KEYS,
}


def split_layers(weights: Mapping[str, object], prefix: str) -> List[Dict[str, object]]:
    """split flat '<prefix>.<i>.<key>' names into an ordered list of per-layer dicts"""
    layers: Dict[int, Dict[str, object]] = {}
    for name, value in weights.items():
        head, _, rest = name.partition(".")
        if head == prefix:
            idx, key = rest.split(".")
            layers.setdefault(int(idx), {})[key] = value
    return [layers[i] for i in sorted(layers)]


def init_stack(prefix: str, kind: str, widths: List[int], rng: np.random.Generator) -> Dict[str, np.ndarray]:
    """flat '<prefix>.<i>.<key>' weights for a stack with the given channel widths"""
    weights = {}
    for i, (c_in, c_out) in enumerate(zip(widths[:-1], widths[1:])):
        for key, value in init_layer(kind, c_in, c_out, rng).items():
            weights[f"{prefix}.{i}.{key}"] = value
    return weights


def stack_shapes(prefix: str, kind: str, widths: List[int]) -> Dict[str, tuple]:
    """expected shape of every weight that init_stack creates"""
    shapes = {}
    for i, (c_in, c_out) in enumerate(zip(widths[:-1], widths[1:])):
        for key in LAYER_KEYS[kind]:
            shapes[f"{prefix}.{i}.{key}"] = (c_out,) if key == "b" else (c_in, c_out)
    return shapes


def apply_stack(v: Tensor, kind: str, stack: List[LayerWeights],
                activate_last: bool = True, slope: float = 0.01) -> Tensor:
    """
    compose layers of one kind, applying q after every layer

    with activate_last=False the final layer is left linear (identity output).
    """
    layer = LAYER_FUNCTIONS[kind]
    for i, weights in enumerate(stack):
        v = layer(v, weights)
        if activate_last or i < len(stack) - 1:
            v = leaky_relu(v, slope)
    return v


# initialization

def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    """uniform on [-r, r] with r = sqrt(6 / (fan_in + fan_out))"""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_layer(kind: str, in_ch: int, out_ch: int, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    """fresh weights for one layer; every mixing matrix is its own fan_in x fan_out map"""
    weights = {key: glorot_uniform(rng, in_ch, out_ch) for key in LAYER_KEYS[kind] if key != "b"}
    weights["b"] = np.zeros(out_ch)
    return weights


def stack_widths(in_ch: int, hidden: int, width: int, out_ch: int) -> List[int]:
    """channel counts [in, width x hidden, out] of a stack with hidden+1 layers"""
    return [in_ch] + [width] * hidden + [out_ch]
