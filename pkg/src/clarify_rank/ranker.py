"""Sped-up RankNet: score all candidates of a query in one forward pass,
accumulate the pairwise logistic-loss gradients into per-candidate lambdas,
and backpropagate once per group.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .eval_stats import LengthMismatch, mrr, ndcg
from .nn_core import MlpConfig, MlpModel, backward, forward
from .optim import OptimConfig, attach, step
from .vectorize import FeatureGroup


class EmptyGroups(ValueError):
    pass


@dataclass(frozen=True)
class RankerConfig:
    """Ranking model setup: hidden layers 32/16 with batchnorm and
    LeakyReLU(0.02), AMSGrad at 1e-3 with weight decay 1e-3, 5 epochs.

    The input is the 4 lexical features, plus predicted engagement when
    ``with_pue`` is set.
    """

    with_pue: bool = True
    epochs: int = 5
    mlp: MlpConfig = field(
        default_factory=lambda: MlpConfig(input_dim=0, hidden=(32, 16), output_dim=1)
    )
    optim: OptimConfig = field(
        default_factory=lambda: OptimConfig(kind="amsgrad", lr=1e-3, weight_decay=1e-3)
    )
    sigma: float = 1.0
    seed: int = 0

    @property
    def input_dim(self) -> int:
        return 5 if self.with_pue else 4

    def resolve_mlp(self) -> MlpConfig:
        return replace(self.mlp, input_dim=self.input_dim, output_dim=1)


@dataclass(frozen=True)
class LambdaSet:
    """Per-candidate gradients of the pairwise cost w.r.t. the scores."""

    lambdas: np.ndarray
    cost: float  # sum of ln(1 + exp(-sigma * (s_i - s_j))) over preference pairs
    n_pairs: int


def lambda_gradients(scores, relevance, sigma: float = 1.0) -> LambdaSet:
    """Factorized RankNet gradients.

    For every ordered pair (i, j) with rel_i > rel_j the pair contributes
    -sigma / (1 + exp(sigma * (s_i - s_j))) to lambda_i and its negation to
    lambda_j; equal-relevance pairs contribute nothing. The lambdas sum to
    zero by antisymmetry.
    """
    s = np.asarray(scores, dtype=np.float64)
    r = np.asarray(relevance)
    if s.shape != r.shape or s.ndim != 1:
        raise LengthMismatch(f"scores {s.shape} vs relevance {r.shape}")
    if s.size == 0:
        raise LengthMismatch("empty group")

    diff = s[:, None] - s[None, :]
    preferred = r[:, None] > r[None, :]
    pair_lambda = np.where(preferred, -sigma * expit(-sigma * diff), 0.0)
    lambdas = pair_lambda.sum(axis=1) - pair_lambda.sum(axis=0)
    cost = float(np.logaddexp(0.0, -sigma * diff)[preferred].sum())
    return LambdaSet(lambdas=lambdas, cost=cost, n_pairs=int(preferred.sum()))


@dataclass
class EpochMetrics:
    epoch: int
    mean_cost: float
    val_ndcg: float | None
    val_mrr: float | None


@dataclass
class RankerHistory:
    per_epoch: list[EpochMetrics] = field(default_factory=list)
    skipped_degenerate_groups: int = 0


def train_ranker(
    config: RankerConfig,
    groups: list[FeatureGroup],
    val_groups: list[FeatureGroup] | None = None,
) -> tuple[MlpModel, RankerHistory]:
    """Train on per-query groups: one forward over the group's candidates,
    lambdas as the output gradient, one optimizer step per group.

    Groups whose candidates all share one relevance value yield no preference
    pairs; they are skipped and counted, not an error.
    """
    if not groups:
        raise EmptyGroups("no training groups")
    for g in groups:
        if g.features.shape[1] != config.input_dim:
            raise ValueError(
                f"group {g.query!r} has {g.features.shape[1]} features, config wants {config.input_dim}"
            )

    rng = np.random.default_rng(config.seed)
    model = MlpModel(config.resolve_mlp(), rng)
    state = attach(config.optim, model)
    history = RankerHistory()

    for epoch in range(config.epochs):
        order = rng.permutation(len(groups))
        cost_total = 0.0
        pair_total = 0
        for gi in order:
            group = groups[gi]
            if np.all(group.relevance == group.relevance[0]):
                if epoch == 0:
                    history.skipped_degenerate_groups += 1
                continue
            model.train()
            out, cache = forward(model, group.features, rng=rng)
            lset = lambda_gradients(out[:, 0], group.relevance, config.sigma)
            grads = backward(model, cache, lset.lambdas[:, None])
            step(model.parameters(), grads, state, config.optim)
            cost_total += lset.cost
            pair_total += lset.n_pairs

        val_ndcg = val_mrr = None
        if val_groups:
            ndcgs, mrrs = evaluate_ranker(model, val_groups)
            val_ndcg = float(np.mean(ndcgs))
            val_mrr = float(np.mean(mrrs))
        history.per_epoch.append(
            EpochMetrics(
                epoch=epoch,
                mean_cost=cost_total / max(pair_total, 1),
                val_ndcg=val_ndcg,
                val_mrr=val_mrr,
            )
        )

    model.eval()
    return model, history


def rank(model: MlpModel, features: np.ndarray) -> np.ndarray:
    """Candidate order by descending score; ties keep original candidate order."""
    model.eval()
    out, _ = forward(model, np.asarray(features, dtype=np.float64))
    return np.argsort(-out[:, 0], kind="stable")


def evaluate_ranker(
    model: MlpModel, groups: list[FeatureGroup]
) -> tuple[np.ndarray, np.ndarray]:
    """Per-query NDCG and MRR of the model's rankings (paired-test samples)."""
    if not groups:
        raise EmptyGroups("no evaluation groups")
    ndcgs = np.empty(len(groups))
    mrrs = np.empty(len(groups))
    for i, group in enumerate(groups):
        order = rank(model, group.features)
        ranked_rels = group.relevance[order]
        ndcgs[i] = ndcg(ranked_rels)
        mrrs[i] = mrr(ranked_rels)
    return ndcgs, mrrs
