"""Engagement prediction and clarification-pane ranking.

Two-stage pipeline: an MLP predicts user engagement with clarification panes
from lexical features (TFIDF or precomputed sentence embeddings); the
predicted engagement then feeds a sped-up RankNet that ranks panes per query.
"""

from .data_ingest import (
    ClickRecord,
    ClickSchema,
    CorpusStats,
    Dataset,
    GroupedDataset,
    Impression,
    compute_stats,
    parse_click,
    parse_click_explore,
    write_click,
)
from .preprocess import (
    PreprocessConfig,
    RankGroup,
    SplitFractions,
    add_negatives,
    assign_relevance,
    balance_zero,
    filter_impression,
    reduce_classes,
    split_queries,
    split_rows,
)
from .vectorize import (
    EmbeddingMatrix,
    StandardizationStats,
    TfidfModel,
    load_embeddings,
    ranker_features,
    save_embeddings,
    tfidf_fit,
    tfidf_transform,
)
from .nn_core import Batch, MlpConfig, MlpModel, backward, ce_loss, forward, mse_loss
from .optim import OptimConfig, OptimState, attach, step
from .predictor import PredictorConfig, TrainHistory, baselines, evaluate_predictor, train_predictor
from .ranker import LambdaSet, RankerConfig, lambda_gradients, rank, train_ranker
from .eval_stats import ConfusionMatrix, TTestResult, confusion, mrr, ndcg, paired_ttest
from .config import ExperimentConfig, derive_seed, load_config
from .experiment import run_predict_experiment, run_rank_experiment, sweep

__version__ = "0.1.0"
