"""Central finite-difference gradient oracle, independent of the analytic
backward pass it checks.

Two situations make the oracle itself invalid and trigger a resample, never a
pass: pre-activations within a few step sizes of the LeakyReLU kink
(non-differentiable point), and configurations where halving the step changes
the numeric gradient materially (truncation error dominates; batchnorm over a
small batch with tiny variance can have third derivatives in the thousands).
"""

from __future__ import annotations

import numpy as np

from clarify_rank.nn_core import MlpConfig, MlpModel, backward, ce_loss, forward, mse_loss

FD_STEP = 1e-3
KINK_MARGIN = 5 * FD_STEP


def loss_value(model, X, y, loss_kind: str, dropout_seed: int | None = None) -> float:
    rng = np.random.default_rng(dropout_seed) if dropout_seed is not None else None
    out, _ = forward(model, X, rng=rng)
    if loss_kind == "mse":
        return mse_loss(out[:, 0], y)[0]
    return ce_loss(out, y)[0]


def numeric_gradients(model, X, y, loss_kind: str, dropout_seed: int | None = None, h: float = FD_STEP):
    grads = {}
    for name, param in model.params.items():
        flat = param.ravel()
        g = np.zeros(flat.size)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            plus = loss_value(model, X, y, loss_kind, dropout_seed)
            flat[i] = original - h
            minus = loss_value(model, X, y, loss_kind, dropout_seed)
            flat[i] = original
            g[i] = (plus - minus) / (2 * h)
        grads[name] = g.reshape(param.shape)
    return grads


def oracle_consistent(numeric_h: dict, numeric_half: dict, tol: float = 3e-5) -> bool:
    """Step-halving self-check: central differences have O(h^2) truncation, so
    the h and h/2 estimates disagreeing beyond ``tol`` means the h-step oracle
    cannot certify a 1e-4 tolerance."""
    return max_relative_error(numeric_h, numeric_half) < tol


def max_relative_error(analytic: dict, numeric: dict) -> float:
    worst = 0.0
    for name in analytic:
        a = analytic[name]
        n = numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-3)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


def kink_adjacent(model, X, dropout_seed: int | None = None) -> bool:
    """True when any LeakyReLU input is too close to 0 for finite differences."""
    rng = np.random.default_rng(dropout_seed) if dropout_seed is not None else None
    _, cache = forward(model, X, rng=rng)
    return any((np.abs(blk.pre_activation) < KINK_MARGIN).any() for blk in cache.blocks)


def random_small_setup(rng: np.random.Generator):
    """One random small configuration: (model, X, y, loss_kind, dropout_seed)."""
    loss_kind = "mse" if rng.random() < 0.5 else "ce"
    input_dim = int(rng.integers(2, 8))
    n_hidden = int(rng.integers(1, 3))
    hidden = tuple(int(rng.integers(2, 8)) for _ in range(n_hidden))
    output_dim = 1 if loss_kind == "mse" else int(rng.integers(2, 6))
    use_batchnorm = bool(rng.random() < 0.5)
    dropout_p = 0.25 if rng.random() < 0.25 else 0.0
    config = MlpConfig(
        input_dim=input_dim,
        hidden=hidden,
        output_dim=output_dim,
        leaky_slope=0.02,
        use_batchnorm=use_batchnorm,
        dropout_p=dropout_p,
    )
    model = MlpModel(config, rng)
    if rng.random() < 0.2:
        model.eval()
        # make eval-mode running stats non-trivial
        for name in model.buffers:
            model.buffers[name] = np.abs(rng.normal(0.5, 0.2, size=model.buffers[name].shape)) + 0.5
    low = 4 if (use_batchnorm and model.training) else 2  # tiny-batch batchnorm has wild curvature
    batch = int(rng.integers(low, 9))
    X = rng.normal(0.0, 2.0, size=(batch, input_dim))
    if loss_kind == "mse":
        y = rng.normal(size=batch)
    else:
        y = rng.integers(0, output_dim, size=batch)
    dropout_seed = int(rng.integers(2**31)) if (dropout_p > 0 and model.training) else None
    return model, X, y, loss_kind, dropout_seed


def run_gradient_check(rng: np.random.Generator) -> float | None:
    """Check one random configuration; returns the max relative error between
    analytic and numeric gradients, or None when the sampled configuration
    falls outside the oracle's validity (kink-adjacent or truncation-bound)."""
    model, X, y, loss_kind, dropout_seed = random_small_setup(rng)
    if kink_adjacent(model, X, dropout_seed):
        return None
    drop_rng = np.random.default_rng(dropout_seed) if dropout_seed is not None else None
    out, cache = forward(model, X, rng=drop_rng)
    if loss_kind == "mse":
        _, grad = mse_loss(out[:, 0], y)
        grad = grad[:, None]
    else:
        _, grad = ce_loss(out, y)
    analytic = backward(model, cache, grad)
    numeric = numeric_gradients(model, X, y, loss_kind, dropout_seed)
    half = numeric_gradients(model, X, y, loss_kind, dropout_seed, h=FD_STEP / 2)
    if not oracle_consistent(numeric, half):
        return None
    return max_relative_error(analytic, numeric)
