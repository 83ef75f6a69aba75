"""Training and evaluation of the engagement regressor / classifier, with
checkpoint-on-best-validation, plus the naive constant baselines.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from math import log
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .nn_core import MlpConfig, MlpModel, backward, ce_loss, forward, mse_loss, per_sample_ce
from .optim import OptimConfig, attach, step

TASKS = ("regression", "classification")
EVAL_BATCH = 1024
BASELINE_CE_SMOOTHING = 1e-12


class EmptySplit(ValueError):
    pass


class WidthMismatch(ValueError):
    pass


class EmptyLabels(ValueError):
    pass


@dataclass(frozen=True)
class PredictorConfig:
    """Engagement-prediction training setup; defaults follow the tuned values
    (two hidden layers 300/32, AMSGrad at 1e-3 with no weight decay, 40
    epochs, batches of 64, validation every 100 batches)."""

    task: str = "regression"
    n_classes: int = 11
    epochs: int = 40
    batch_size: int = 64
    eval_every: int = 100
    mlp: MlpConfig = field(
        default_factory=lambda: MlpConfig(input_dim=0, hidden=(300, 32), output_dim=0)
    )
    optim: OptimConfig = field(default_factory=lambda: OptimConfig(kind="amsgrad", lr=1e-3))
    seed: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")
        if self.n_classes not in (2, 11):
            raise ValueError("n_classes must be 2 or 11")

    def resolve_mlp(self, input_dim: int) -> MlpConfig:
        """Fill in data-dependent widths: input from the vectorizer, output a
        scalar head (regression) or one logit per class."""
        output_dim = 1 if self.task == "regression" else self.n_classes
        return replace(self.mlp, input_dim=input_dim, output_dim=output_dim)


@dataclass
class HistoryPoint:
    global_batch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainHistory:
    entries: list[HistoryPoint] = field(default_factory=list)
    best_val_loss: float = float("inf")
    best_checkpoint: int = -1  # global batch index of the best validation pass
    skipped_rows: int = 0  # rows dropped with the last incomplete batch, per epoch

    def to_jsonl(self, path: str | Path) -> None:
        import json

        lines = [
            json.dumps(
                {"global_batch": e.global_batch, "train_loss": e.train_loss, "val_loss": e.val_loss}
            )
            for e in self.entries
        ]
        lines.append(
            json.dumps({"best_val_loss": self.best_val_loss, "best_checkpoint": self.best_checkpoint})
        )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _dense(X, rows: np.ndarray) -> np.ndarray:
    block = X[rows]
    if sp.issparse(block):
        block = block.toarray()
    return np.asarray(block, dtype=np.float64)


def _batch_loss(model: MlpModel, Xb: np.ndarray, yb: np.ndarray, task: str, rng=None):
    out, cache = forward(model, Xb, rng=rng)
    if task == "regression":
        loss, grad = mse_loss(out[:, 0], yb)
        return loss, grad[:, None], cache
    loss, grad = ce_loss(out, yb.astype(np.int64))
    return loss, grad, cache


def _validation_loss(model: MlpModel, X, y, task: str) -> float:
    """Full validation pass in Eval mode; batches need not be full."""
    was_training = model.training
    model.eval()
    try:
        n = y.shape[0]
        total = 0.0
        for start in range(0, n, EVAL_BATCH):
            rows = np.arange(start, min(start + EVAL_BATCH, n))
            out, _ = forward(model, _dense(X, rows))
            if task == "regression":
                total += float(((out[:, 0] - y[rows]) ** 2).sum())
            else:
                total += float(per_sample_ce(out, y[rows].astype(np.int64)).sum())
        return total / n
    finally:
        if was_training:
            model.train()


def train_predictor(
    config: PredictorConfig,
    train: tuple,
    val: tuple,
    checkpoint_dir: str | Path | None = None,
) -> tuple[MlpModel, TrainHistory]:
    """Train with shuffled fixed-size batches (last incomplete batch dropped),
    validating every ``eval_every`` batches, and return the parameters from
    the best validation pass.
    """
    X_train, y_train = train
    X_val, y_val = val
    if y_train.shape[0] == 0 or y_val.shape[0] == 0:
        raise EmptySplit("train and validation splits must be non-empty")
    if X_train.shape[1] != X_val.shape[1]:
        raise WidthMismatch(f"train width {X_train.shape[1]} vs val width {X_val.shape[1]}")
    n = y_train.shape[0]
    if n < config.batch_size:
        raise EmptySplit(f"{n} rows cannot fill one batch of {config.batch_size}")

    rng = np.random.default_rng(config.seed)
    model = MlpModel(config.resolve_mlp(X_train.shape[1]), rng)
    state = attach(config.optim, model)
    history = TrainHistory()

    best_params: dict[str, np.ndarray] = {}
    best_buffers: dict[str, np.ndarray] = {}
    n_batches = n // config.batch_size
    total_batches = n_batches * config.epochs
    history.skipped_rows = n - n_batches * config.batch_size
    global_batch = 0
    running_loss = 0.0
    running_count = 0

    for _ in range(config.epochs):
        perm = rng.permutation(n)
        for b in range(n_batches):
            rows = perm[b * config.batch_size : (b + 1) * config.batch_size]
            Xb = _dense(X_train, rows)
            yb = y_train[rows]
            loss, grad, cache = _batch_loss(model, Xb, yb, config.task, rng=rng)
            grads = backward(model, cache, grad)
            step(model.parameters(), grads, state, config.optim)
            global_batch += 1
            running_loss += loss
            running_count += 1

            if global_batch % config.eval_every == 0 or global_batch == total_batches:
                val_loss = _validation_loss(model, X_val, y_val, config.task)
                history.entries.append(
                    HistoryPoint(global_batch, running_loss / running_count, val_loss)
                )
                running_loss = 0.0
                running_count = 0
                if val_loss < history.best_val_loss:
                    history.best_val_loss = val_loss
                    history.best_checkpoint = global_batch
                    best_params = {k: v.copy() for k, v in model.params.items()}
                    best_buffers = {k: v.copy() for k, v in model.buffers.items()}
                    if checkpoint_dir is not None:
                        _write_checkpoint(Path(checkpoint_dir), global_batch, model)

    best = model.copy()
    best.load_state(best_params, best_buffers)
    best.eval()
    return best, history


def _write_checkpoint(directory: Path, global_batch: int, model: MlpModel) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    arrays = {f"param.{k}": v for k, v in model.params.items()}
    arrays.update({f"buffer.{k}": v for k, v in model.buffers.items()})
    np.savez(directory / "best_checkpoint.npz", global_batch=global_batch, **arrays)


@dataclass
class EvalResult:
    loss: float
    per_sample_losses: np.ndarray
    accuracy: float | None
    predictions: np.ndarray  # regression: scalar outputs; classification: argmax classes
    predicted_classes: np.ndarray  # regression predictions rounded+clamped, or argmax


def evaluate_predictor(model: MlpModel, split: tuple, task: str, n_classes: int = 11) -> EvalResult:
    """Evaluate on a split, keeping per-sample losses for significance tests.

    Regression predictions are additionally rounded half-up and clamped into
    [0, n_classes - 1] so they can be compared against the classifier.
    """
    X, y = split
    if X.shape[1] != model.config.input_dim:
        raise WidthMismatch(f"input width {X.shape[1]} vs model {model.config.input_dim}")
    model.eval()
    n = y.shape[0]
    outputs = []
    for start in range(0, n, EVAL_BATCH):
        rows = np.arange(start, min(start + EVAL_BATCH, n))
        out, _ = forward(model, _dense(X, rows))
        outputs.append(out)
    out = np.concatenate(outputs)

    if task == "regression":
        preds = out[:, 0]
        per_sample = (preds - y) ** 2
        rounded = np.clip(np.floor(preds + 0.5), 0, n_classes - 1).astype(np.int64)
        return EvalResult(
            loss=float(per_sample.mean()),
            per_sample_losses=per_sample,
            accuracy=None,
            predictions=preds,
            predicted_classes=rounded,
        )

    classes = y.astype(np.int64)
    per_sample = per_sample_ce(out, classes)
    predicted = out.argmax(axis=1)
    return EvalResult(
        loss=float(per_sample.mean()),
        per_sample_losses=per_sample,
        accuracy=float((predicted == classes).mean()),
        predictions=predicted,
        predicted_classes=predicted,
    )


def predict_scalar(model: MlpModel, X) -> np.ndarray:
    """Eval-mode scalar predictions (regression head) over all rows of X."""
    model.eval()
    n = X.shape[0]
    chunks = []
    for start in range(0, n, EVAL_BATCH):
        rows = np.arange(start, min(start + EVAL_BATCH, n))
        out, _ = forward(model, _dense(X, rows))
        chunks.append(out[:, 0])
    return np.concatenate(chunks)


@dataclass
class BaselineEntry:
    name: str
    loss: float
    accuracy: float | None
    per_sample_losses: np.ndarray


@dataclass
class BaselineReport:
    task: str
    entries: dict[str, BaselineEntry]


def baselines(train_labels, test_labels, task: str, n_classes: int = 11) -> BaselineReport:
    """Naive baselines scored on the test labels.

    Regression: the constant mean / median / mode of the training labels,
    scored by MSE. Classification: the constant most-frequent training class
    (CE of an eps-smoothed one-hot prediction, plus accuracy) and a uniform
    random model (expected CE = ln K, expected accuracy = 1/K).
    """
    y_train = np.asarray(train_labels, dtype=np.float64)
    y_test = np.asarray(test_labels, dtype=np.float64)
    if y_train.size == 0 or y_test.size == 0:
        raise EmptyLabels("baselines need non-empty train and test labels")

    if task == "regression":
        entries = {}
        for name, constant in (
            ("mean", float(y_train.mean())),
            ("median", float(np.median(y_train))),
            ("mode", float(_mode(y_train))),
        ):
            per_sample = (constant - y_test) ** 2
            entries[name] = BaselineEntry(
                name=name, loss=float(per_sample.mean()), accuracy=None, per_sample_losses=per_sample
            )
        return BaselineReport(task=task, entries=entries)

    train_classes = y_train.astype(np.int64)
    test_classes = y_test.astype(np.int64)
    constant = int(_mode(train_classes))
    # One-hot-greedy constant prediction, smoothed so wrong classes cost
    # -ln(eps) instead of infinity.
    probs = np.full(n_classes, BASELINE_CE_SMOOTHING)
    probs[constant] = 1.0 - BASELINE_CE_SMOOTHING * (n_classes - 1)
    per_sample = -np.log(probs[test_classes])
    entries = {
        "constant_class": BaselineEntry(
            name="constant_class",
            loss=float(per_sample.mean()),
            accuracy=float((test_classes == constant).mean()),
            per_sample_losses=per_sample,
        ),
        "uniform_random": BaselineEntry(
            name="uniform_random",
            loss=log(n_classes),
            accuracy=1.0 / n_classes,
            per_sample_losses=np.full(test_classes.size, log(n_classes)),
        ),
    }
    return BaselineReport(task=task, entries=entries)


def _mode(values: np.ndarray) -> float:
    """Most frequent value; ties broken toward the smallest."""
    uniq, counts = np.unique(values, return_counts=True)
    return float(uniq[counts.argmax()])
