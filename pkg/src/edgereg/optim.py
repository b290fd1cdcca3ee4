"""
Adam with a step-decay learning-rate schedule over flat parameter vectors.
"""

from dataclasses import dataclass

import numpy as np

from edgereg.errors import ConfigError, DivergenceError, ShapeError


@dataclass(frozen=True)
class OptimizerConfig:
    lr0: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    decay_factor: float = 0.1
    decay_every: int = 100

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ConfigError(f"{name} must be in (0, 1), got {value}")
        if not self.eps_adam > 0:
            raise ConfigError(f"eps_adam must be positive, got {self.eps_adam}")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ConfigError(f"decay_factor must be in (0, 1], got {self.decay_factor}")
        if int(self.decay_every) != self.decay_every or self.decay_every < 1:
            raise ConfigError(f"decay_every must be a positive integer, got {self.decay_every}")


@dataclass(frozen=True, eq=False)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    def __post_init__(self):
        if self.m.shape != self.v.shape or self.m.ndim != 1:
            raise ShapeError(f"moment vectors must be 1D of equal length, got {self.m.shape} and {self.v.shape}")
        if self.t < 0:
            raise ConfigError(f"step counter must be >= 0, got {self.t}")

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0)


def lr_at(t: int, cfg: OptimizerConfig) -> float:
    """Learning rate of step t (1-based): lr0 * decay_factor ** ((t - 1) // decay_every)."""
    if t < 1:
        raise ConfigError(f"iteration must be >= 1, got {t}")
    return cfg.lr0 * cfg.decay_factor ** ((t - 1) // cfg.decay_every)


def adam_step(
    state: AdamState, params: np.ndarray, grad: np.ndarray, cfg: OptimizerConfig
) -> tuple[AdamState, np.ndarray]:
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise ShapeError(
            f"length mismatch: params {params.shape}, grad {grad.shape}, state {state.m.shape}"
        )
    if not np.all(np.isfinite(grad)):
        bad = int(np.count_nonzero(~np.isfinite(grad)))
        raise DivergenceError(f"non-finite gradient in {bad} of {grad.size} components", state.t + 1)

    t = state.t + 1
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad * grad
    m_hat = m / (1.0 - cfg.beta1 ** t)
    v_hat = v / (1.0 - cfg.beta2 ** t)
    step = lr_at(t, cfg) * m_hat / (np.sqrt(v_hat) + cfg.eps_adam)
    return AdamState(m, v, t), params - step
