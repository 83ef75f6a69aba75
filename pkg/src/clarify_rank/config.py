"""Experiment configuration: a single JSON file with CLI overrides, plus the
seed-derivation scheme that routes one top-level seed into named per-stage
seeds.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .nn_core import MlpConfig
from .optim import OptimConfig
from .predictor import PredictorConfig
from .preprocess import PreprocessConfig, SplitFractions
from .ranker import RankerConfig

DATA_DIR_ENV = "CLARIFY_RANK_DATA_DIR"


class ConfigError(ValueError):
    pass


def derive_seed(master_seed: int, stage: str) -> int:
    """Stable 63-bit seed for a named stage, derived from the master seed."""
    digest = hashlib.sha256(f"{stage}:{master_seed}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclass(frozen=True)
class DataPaths:
    click: str | None = None
    click_explore: str | None = None
    click_emb1: str | None = None
    click_explore_emb1: str | None = None

    def resolve(self, data_dir: str | None) -> "DataPaths":
        """Resolve relative paths against CLARIFY_RANK_DATA_DIR when set."""
        root = data_dir or os.environ.get(DATA_DIR_ENV)

        def fix(p: str | None) -> str | None:
            if p is None or os.path.isabs(p) or root is None or Path(p).exists():
                return p
            return str(Path(root) / p)

        return DataPaths(
            click=fix(self.click),
            click_explore=fix(self.click_explore),
            click_emb1=fix(self.click_emb1),
            click_explore_emb1=fix(self.click_explore_emb1),
        )


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    data: DataPaths = field(default_factory=DataPaths)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    split: SplitFractions = field(default_factory=SplitFractions)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    ranker: RankerConfig = field(default_factory=RankerConfig)
    negatives_per_group: int = 10

    def to_dict(self) -> dict:
        # json round trip normalizes tuples to lists
        return json.loads(json.dumps(dataclasses.asdict(self)))

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()[:16]

    def require(self, *path_fields: str) -> None:
        """Validate that the named data files exist."""
        for name in path_fields:
            value = getattr(self.data, name)
            if value is None:
                raise ConfigError(f"config needs data.{name}")
            if not Path(value).exists():
                raise ConfigError(f"data.{name} does not exist: {value}")


def _mlp_from(d: dict, default_hidden: tuple[int, ...]) -> MlpConfig:
    return MlpConfig(
        input_dim=d.get("input_dim", 0),
        hidden=tuple(d.get("hidden", default_hidden)),
        output_dim=d.get("output_dim", 0),
        leaky_slope=d.get("leaky_slope", 0.02),
        use_batchnorm=d.get("use_batchnorm", True),
        dropout_p=d.get("dropout_p", 0.0),
    )


def _optim_from(d: dict) -> OptimConfig:
    return OptimConfig(
        kind=d.get("kind", "amsgrad"),
        lr=d.get("lr", 1e-3),
        momentum=d.get("momentum", 0.9),
        beta1=d.get("beta1", 0.9),
        beta2=d.get("beta2", 0.999),
        eps=d.get("eps", 1e-8),
        weight_decay=d.get("weight_decay", 0.0),
    )


def config_from_dict(raw: dict) -> ExperimentConfig:
    data = DataPaths(**raw.get("data", {}))
    pp = PreprocessConfig(**raw.get("preprocess", {}))
    split = SplitFractions(**raw.get("split", {}))

    pred_raw = dict(raw.get("predictor", {}))
    pred = PredictorConfig(
        task=pred_raw.get("task", "regression"),
        n_classes=pred_raw.get("n_classes", 11),
        epochs=pred_raw.get("epochs", 40),
        batch_size=pred_raw.get("batch_size", 64),
        eval_every=pred_raw.get("eval_every", 100),
        mlp=_mlp_from(pred_raw.get("mlp", {}), (300, 32)),
        optim=_optim_from(pred_raw.get("optim", {"kind": "amsgrad", "lr": 1e-3})),
        seed=pred_raw.get("seed", 0),
    )

    rank_raw = dict(raw.get("ranker", {}))
    ranker = RankerConfig(
        with_pue=rank_raw.get("with_pue", True),
        epochs=rank_raw.get("epochs", 5),
        mlp=_mlp_from(rank_raw.get("mlp", {}), (32, 16)),
        optim=_optim_from(rank_raw.get("optim", {"kind": "amsgrad", "lr": 1e-3, "weight_decay": 1e-3})),
        sigma=rank_raw.get("sigma", 1.0),
        seed=rank_raw.get("seed", 0),
    )

    return ExperimentConfig(
        seed=raw.get("seed", 0),
        output_dir=raw.get("output_dir", "runs/default"),
        data=data,
        preprocess=pp,
        split=split,
        predictor=pred,
        ranker=ranker,
        negatives_per_group=raw.get("negatives_per_group", 10),
    )


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply ``--set dotted.key=value`` overrides onto a raw config dict.

    Values parse as JSON when possible, otherwise as literal strings.
    """
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        dotted, raw_value = item.split("=", 1)
        try:
            value = json.loads(raw_value)
        except json.JSONDecodeError:
            value = raw_value
        node = raw
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return raw


def load_config(path: str | Path, overrides: list[str] | None = None) -> ExperimentConfig:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if overrides:
        raw = apply_overrides(raw, overrides)
    cfg = config_from_dict(raw)
    return dataclasses.replace(cfg, data=cfg.data.resolve(None))
