"""Minimal dense network used by both pipeline stages: linear blocks with
batch normalization, LeakyReLU and optional dropout, a linear output layer,
MSE / softmax cross-entropy losses, and exact reverse-mode gradients.

Everything runs in float64 so analytic gradients can be checked against
central finite differences tightly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.1  # running = (1 - m) * running + m * batch


class ShapeMismatch(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class IndexOutOfRange(ValueError):
    pass


class StaleCache(ValueError):
    pass


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden: tuple[int, ...]
    output_dim: int
    leaky_slope: float = 0.02
    use_batchnorm: bool = True
    dropout_p: float = 0.0

    def __post_init__(self):
        if self.leaky_slope < 0:
            raise ValueError("leaky_slope must be >= 0")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")


@dataclass
class Batch:
    """Training inputs with either real-valued or class-index targets."""

    inputs: np.ndarray
    targets: np.ndarray


@dataclass
class _BlockCache:
    x: np.ndarray  # block input
    z: np.ndarray  # linear output, pre-normalization
    zhat: np.ndarray | None  # normalized activations (batchnorm only)
    inv_std: np.ndarray | None
    used_batch_stats: bool
    pre_activation: np.ndarray  # input to LeakyReLU
    dropout_mask: np.ndarray | None


@dataclass
class ForwardCache:
    model_token: int
    training: bool
    blocks: list[_BlockCache]
    last_hidden: np.ndarray


class MlpModel:
    """Stack of (linear -> batchnorm -> LeakyReLU -> dropout) blocks plus a
    plain linear output layer.

    Train mode normalizes with batch statistics and updates running stats;
    Eval mode normalizes with running stats only, so eval outputs do not
    depend on batch composition. Single-row train batches fall back to
    running stats (batch variance is undefined there).
    """

    def __init__(self, config: MlpConfig, rng: np.random.Generator):
        self.config = config
        self.training = True
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

        gain = np.sqrt(2.0 / (1.0 + config.leaky_slope**2))
        fan_in = config.input_dim
        for i, width in enumerate(config.hidden):
            bound = gain * np.sqrt(3.0 / fan_in)
            self.params[f"h{i}.W"] = rng.uniform(-bound, bound, size=(fan_in, width))
            self.params[f"h{i}.b"] = np.zeros(width)
            if config.use_batchnorm:
                self.params[f"h{i}.gamma"] = np.ones(width)
                self.params[f"h{i}.beta"] = np.zeros(width)
                self.buffers[f"h{i}.running_mean"] = np.zeros(width)
                self.buffers[f"h{i}.running_var"] = np.ones(width)
            fan_in = width
        bound = gain * np.sqrt(3.0 / fan_in)
        self.params["out.W"] = rng.uniform(-bound, bound, size=(fan_in, config.output_dim))
        self.params["out.b"] = np.zeros(config.output_dim)

    def train(self) -> "MlpModel":
        self.training = True
        return self

    def eval(self) -> "MlpModel":
        self.training = False
        return self

    def parameters(self) -> dict[str, np.ndarray]:
        return self.params

    def copy(self) -> "MlpModel":
        clone = object.__new__(MlpModel)
        clone.config = self.config
        clone.training = self.training
        clone.params = {k: v.copy() for k, v in self.params.items()}
        clone.buffers = {k: v.copy() for k, v in self.buffers.items()}
        return clone

    def load_state(self, params: dict[str, np.ndarray], buffers: dict[str, np.ndarray]) -> None:
        for key, value in params.items():
            np.copyto(self.params[key], value)
        for key, value in buffers.items():
            np.copyto(self.buffers[key], value)


def forward(
    model: MlpModel, inputs: np.ndarray, rng: np.random.Generator | None = None
) -> tuple[np.ndarray, ForwardCache]:
    """Run the network; returns (outputs, cache for backward).

    ``rng`` is required only when dropout is active (train mode, p > 0).
    """
    cfg = model.config
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise ShapeMismatch(f"expected (n, {cfg.input_dim}) inputs, got {x.shape}")
    use_dropout = model.training and cfg.dropout_p > 0.0
    if use_dropout and rng is None:
        raise ValueError("dropout in train mode needs an rng")

    blocks: list[_BlockCache] = []
    for i in range(len(cfg.hidden)):
        z = x @ model.params[f"h{i}.W"] + model.params[f"h{i}.b"]
        if cfg.use_batchnorm:
            use_batch_stats = model.training and z.shape[0] > 1
            if use_batch_stats:
                mean = z.mean(axis=0)
                var = z.var(axis=0)
                inv_std = 1.0 / np.sqrt(var + BN_EPS)
                n = z.shape[0]
                rm = model.buffers[f"h{i}.running_mean"]
                rv = model.buffers[f"h{i}.running_var"]
                rm *= 1.0 - BN_MOMENTUM
                rm += BN_MOMENTUM * mean
                rv *= 1.0 - BN_MOMENTUM
                rv += BN_MOMENTUM * var * n / (n - 1)  # running var is unbiased
            else:
                mean = model.buffers[f"h{i}.running_mean"]
                inv_std = 1.0 / np.sqrt(model.buffers[f"h{i}.running_var"] + BN_EPS)
            zhat = (z - mean) * inv_std
            pre = model.params[f"h{i}.gamma"] * zhat + model.params[f"h{i}.beta"]
        else:
            use_batch_stats = False
            zhat = None
            inv_std = None
            pre = z
        y = np.where(pre > 0, pre, cfg.leaky_slope * pre)
        if use_dropout:
            mask = (rng.random(y.shape) >= cfg.dropout_p) / (1.0 - cfg.dropout_p)
            y = y * mask
        else:
            mask = None
        blocks.append(
            _BlockCache(
                x=x,
                z=z,
                zhat=zhat,
                inv_std=inv_std,
                used_batch_stats=use_batch_stats,
                pre_activation=pre,
                dropout_mask=mask,
            )
        )
        x = y

    out = x @ model.params["out.W"] + model.params["out.b"]
    cache = ForwardCache(model_token=id(model), training=model.training, blocks=blocks, last_hidden=x)
    return out, cache


def backward(model: MlpModel, cache: ForwardCache, loss_grad: np.ndarray) -> dict[str, np.ndarray]:
    """Exact gradients for every parameter given d(loss)/d(outputs).

    Batch-norm gradients include the batch-statistics path when the forward
    pass used batch statistics.
    """
    if cache.model_token != id(model):
        raise StaleCache("cache does not belong to this model")
    cfg = model.config
    grads: dict[str, np.ndarray] = {}

    dout = np.asarray(loss_grad, dtype=np.float64)
    grads["out.W"] = cache.last_hidden.T @ dout
    grads["out.b"] = dout.sum(axis=0)
    dy = dout @ model.params["out.W"].T

    for i in reversed(range(len(cfg.hidden))):
        blk = cache.blocks[i]
        if blk.dropout_mask is not None:
            dy = dy * blk.dropout_mask
        dpre = dy * np.where(blk.pre_activation > 0, 1.0, cfg.leaky_slope)
        if cfg.use_batchnorm:
            grads[f"h{i}.gamma"] = (dpre * blk.zhat).sum(axis=0)
            grads[f"h{i}.beta"] = dpre.sum(axis=0)
            dzhat = dpre * model.params[f"h{i}.gamma"]
            if blk.used_batch_stats:
                n = blk.z.shape[0]
                dz = (blk.inv_std / n) * (
                    n * dzhat - dzhat.sum(axis=0) - blk.zhat * (dzhat * blk.zhat).sum(axis=0)
                )
            else:
                dz = dzhat * blk.inv_std
        else:
            dz = dpre
        grads[f"h{i}.W"] = blk.x.T @ dz
        grads[f"h{i}.b"] = dz.sum(axis=0)
        dy = dz @ model.params[f"h{i}.W"].T

    return grads


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient 2(pred - target)/n."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise LengthMismatch(f"pred {pred.shape} vs target {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff**2))
    return loss, 2.0 * diff / diff.size


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def ce_loss(logits: np.ndarray, classes: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy (natural log) and gradient w.r.t. logits.

    Log-sum-exp stabilized, so extreme logits do not overflow.
    """
    logits = np.asarray(logits, dtype=np.float64)
    classes = np.asarray(classes)
    if logits.ndim != 2 or classes.shape != (logits.shape[0],):
        raise LengthMismatch(f"logits {logits.shape} vs classes {classes.shape}")
    if classes.min() < 0 or classes.max() >= logits.shape[1]:
        raise IndexOutOfRange("class index outside [0, n_classes)")

    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_z[:, None]
    loss = float(-log_probs[np.arange(n), classes].mean())

    grad = np.exp(log_probs)
    grad[np.arange(n), classes] -= 1.0
    return loss, grad / n


def per_sample_ce(logits: np.ndarray, classes: np.ndarray) -> np.ndarray:
    """Per-row cross-entropy, retained for significance tests."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    return log_z - shifted[np.arange(logits.shape[0]), classes]
