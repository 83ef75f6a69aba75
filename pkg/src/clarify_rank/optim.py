"""Parameter update rules: SGD with momentum, Adam, and AMSGrad, with
optional coupled L2 weight decay (decay added to the gradient before the
moment updates).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn_core import MlpModel, ShapeMismatch

OPTIMIZER_KINDS = ("sgd", "adam", "amsgrad")


@dataclass(frozen=True)
class OptimConfig:
    kind: str = "amsgrad"
    lr: float = 1e-3
    momentum: float = 0.9  # sgd only
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ValueError(f"kind must be one of {OPTIMIZER_KINDS}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must be in [0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


@dataclass
class OptimState:
    """Per-parameter moment buffers plus the shared step counter."""

    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)  # first moment / momentum buffer
    v: dict[str, np.ndarray] = field(default_factory=dict)  # second moment
    v_max: dict[str, np.ndarray] = field(default_factory=dict)  # AMSGrad running max of v


def attach(config: OptimConfig, model: MlpModel) -> OptimState:
    """Zero-initialized optimizer state for every model parameter."""
    state = OptimState()
    for name, value in model.parameters().items():
        state.m[name] = np.zeros_like(value)
        if config.kind in ("adam", "amsgrad"):
            state.v[name] = np.zeros_like(value)
        if config.kind == "amsgrad":
            state.v_max[name] = np.zeros_like(value)
    return state


def step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimState,
    config: OptimConfig,
) -> None:
    """One in-place update of all parameters.

    AMSGrad keeps the elementwise maximum of the second moment, so its
    effective step size never grows when gradients shrink; Adam and AMSGrad
    both use bias correction.
    """
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: grad {g.shape} vs param {p.shape}")
        if config.weight_decay:
            g = g + config.weight_decay * p

        if config.kind == "sgd":
            buf = state.m[name]
            buf *= config.momentum
            buf += g
            p -= config.lr * buf
            continue

        # in-place throughout: on full-width TFIDF models the elementwise
        # chain over ~9M parameters is memory-bound
        m = state.m[name]
        v = state.v[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        scratch = g * g
        scratch *= 1.0 - config.beta2
        v *= config.beta2
        v += scratch
        if config.kind == "amsgrad":
            v_max = state.v_max[name]
            np.maximum(v_max, v, out=v_max)
            np.divide(v_max, 1.0 - config.beta2**t, out=scratch)
        else:
            np.divide(v, 1.0 - config.beta2**t, out=scratch)
        np.sqrt(scratch, out=scratch)
        scratch += config.eps
        np.divide(m, scratch, out=scratch)
        scratch *= config.lr / (1.0 - config.beta1**t)
        p -= scratch
