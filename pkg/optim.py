"""
adam update with bias correction and a power-law step-size decay

the effective rate at step t is base_rate * t ** (-decay_exponent); the
estimator and the prior generator use different exponents (two-timescale).
"""

from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import numpy as np


class NonFiniteGradientError(FloatingPointError):
    """raised before any update when a gradient holds nan or inf"""

    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter '{name}'")
        self.name = name


@dataclass(frozen=True)
class AdamConfig:
    base_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_exponent: float = 0.0

    def __post_init__(self):
        if self.base_rate < 0:
            raise ValueError(f"base_rate must be non-negative, got {self.base_rate}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError(f"momenta must lie in [0, 1), got ({self.beta1}, {self.beta2})")
        if self.decay_exponent < 0:
            raise ValueError(f"decay_exponent must be non-negative, got {self.decay_exponent}")


@dataclass
class AdamState:
    """per-parameter moment buffers plus the shared step counter"""
    config: AdamConfig
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros(cls, params: Mapping[str, np.ndarray], config: AdamConfig) -> "AdamState":
        return cls(
            config=config,
            first_moment={k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()},
            second_moment={k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()},
        )

    def effective_rate(self, t: Optional[int] = None) -> float:
        """base_rate * t^(-decay_exponent) at step t (default: the current step)"""
        t = self.step if t is None else t
        if t < 1:
            raise ValueError(f"step must be at least 1, got {t}")
        return self.config.base_rate * float(t) ** (-self.config.decay_exponent)


def adam_step(params: Dict[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: AdamState, ascend: bool = False) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """
    one adam update of params in place

    args:
        params: named parameter arrays (modified in place)
        grads: gradients with the same names and shapes
        state: moment buffers and step counter (modified in place)
        ascend: move up the gradient instead of down

    returns:
        (params, state)
    """
    for name, value in params.items():
        if name not in grads:
            raise ValueError(f"missing gradient for parameter '{name}'")
        if grads[name].shape != value.shape or state.first_moment[name].shape != value.shape:
            raise ValueError(
                f"shape mismatch for '{name}': param {value.shape}, grad {grads[name].shape}, "
                f"moment {state.first_moment[name].shape}"
            )
        if not np.all(np.isfinite(grads[name])):
            raise NonFiniteGradientError(name)

    cfg = state.config
    state.step += 1
    t = state.step
    rate = state.effective_rate(t)
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    sign = 1.0 if ascend else -1.0

    for name, value in params.items():
        g = grads[name]
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        if rate > 0:
            value += sign * rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
    return params, state
