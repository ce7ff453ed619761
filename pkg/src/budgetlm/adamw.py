"""AdamW with bias correction and decoupled weight decay.

Parameters and moments live in plain dicts of numpy arrays keyed by
parameter name. Updates mutate in place; callers serialize access to one
OptimizerState themselves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError

Params = dict[str, np.ndarray]
Grads = dict[str, np.ndarray]


@dataclass(frozen=True)
class OptimizerHyper:
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-6
    weight_decay: float = 0.01
    grad_clip: float = 0.0  # 0 disables clipping

    def __post_init__(self) -> None:
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError(f"betas must be in [0, 1), got {self.beta1}, {self.beta2}")
        if self.eps <= 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.grad_clip < 0:
            raise ConfigError(f"grad_clip must be >= 0, got {self.grad_clip}")


@dataclass
class OptimizerState:
    """First/second moment per parameter plus the shared step counter."""

    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)
    step_count: int = 0

    @classmethod
    def zeros_like(cls, params: Params) -> "OptimizerState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            step_count=0,
        )


def clip_by_global_norm(grads: Grads, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def adamw_step(
    params: Params,
    grads: Grads,
    state: OptimizerState,
    hyper: OptimizerHyper,
    lr: float,
) -> tuple[Params, OptimizerState]:
    """One decoupled-weight-decay Adam update at learning rate lr.

        t <- t+1
        m <- b1*m + (1-b1)*g        mhat = m / (1 - b1^t)
        v <- b2*v + (1-b2)*g^2      vhat = v / (1 - b2^t)
        theta <- theta - lr * (mhat / (sqrt(vhat) + eps) + wd * theta)

    Weight decay acts on the parameter directly, never through the moments.
    """
    if lr < 0:
        raise ConfigError(f"lr must be >= 0, got {lr}")
    if params.keys() != grads.keys() or params.keys() != state.m.keys():
        raise ConfigError("params, grads, and optimizer state must share the same keys")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ConfigError(f"gradient shape mismatch for {name}: {g.shape} vs {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in parameter {name!r}")

    if hyper.grad_clip > 0:
        clip_by_global_norm(grads, hyper.grad_clip)

    state.step_count += 1
    t = state.step_count
    b1, b2 = hyper.beta1, hyper.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t

    for name, theta in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        mhat = m / bc1
        vhat = v / bc2
        theta -= lr * (mhat / (np.sqrt(vhat) + hyper.eps) + hyper.weight_decay * theta)
    return params, state
