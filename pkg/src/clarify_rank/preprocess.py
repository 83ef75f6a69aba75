"""Dataset preprocessing: label balancing, impression filtering, class
reduction, train/val/test splitting, negative sampling and relevance labels
for the ranker.

All operations are pure and deterministic given (input, seed); each call owns
its RNG.
"""

from __future__ import annotations

import json
import logging
import statistics
from dataclasses import dataclass

import numpy as np

from .data_ingest import (
    ClickRecord,
    Dataset,
    EmptyDataset,
    GroupedDataset,
    Impression,
    N_ENGAGEMENT_LEVELS,
)

logger = logging.getLogger(__name__)

VECTORIZER_KINDS = ("tfidf", "embedding")


class PreprocessError(ValueError):
    pass


class DatasetTooSmall(PreprocessError):
    pass


class NotEnoughForeignCandidates(PreprocessError):
    pass


class EmptyGroup(PreprocessError):
    pass


@dataclass(frozen=True)
class PreprocessConfig:
    """The four Boolean-ish preprocessing options plus the seed that fixes
    every random choice downstream."""

    balance: bool = True
    impression_filter: bool = True
    reduced_classes: bool = False
    vectorizer: str = "tfidf"
    seed: int = 0

    def __post_init__(self):
        if self.vectorizer not in VECTORIZER_KINDS:
            raise ValueError(f"vectorizer must be one of {VECTORIZER_KINDS}")


@dataclass(frozen=True)
class SplitFractions:
    train: float = 0.70
    val: float = 0.15
    test: float = 0.15

    def __post_init__(self):
        for name, value in (("train", self.train), ("val", self.val), ("test", self.test)):
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} fraction must be in (0,1), got {value}")
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise ValueError("fractions must sum to 1")


@dataclass(frozen=True)
class Candidate:
    """One ranking candidate: a CP record plus its provenance row and whether
    it was injected as a negative sample from a foreign query."""

    record: ClickRecord
    row_index: int
    is_negative: bool


@dataclass(frozen=True)
class CandidateGroup:
    """All candidates competing for one query.

    ``query_row_index`` is the provenance row of one of the group's own CPs;
    embedding-based features take the query slice from that row.
    """

    query: str
    query_row_index: int
    candidates: tuple[Candidate, ...]


@dataclass(frozen=True)
class RankCandidate:
    record: ClickRecord
    row_index: int
    is_negative: bool
    relevance: int
    pue: float


@dataclass(frozen=True)
class RankGroup:
    """Per-query candidate set with relevance labels derived from PUE."""

    query: str
    query_row_index: int
    candidates: tuple[RankCandidate, ...]

    @property
    def has_positive(self) -> bool:
        return any(not c.is_negative for c in self.candidates)

    def relevances(self) -> list[int]:
        return [c.relevance for c in self.candidates]


def label_counts(dataset: Dataset, n_labels: int = N_ENGAGEMENT_LEVELS) -> list[int]:
    """Per-label record counts, zero-count labels included."""
    counts = [0] * n_labels
    for record in dataset.records:
        counts[record.engagement] += 1
    return counts


def _log_histogram(op: str, before: Dataset, after: Dataset) -> None:
    logger.info(
        json.dumps(
            {"op": op, "before": label_counts(before), "after": label_counts(after)},
            sort_keys=True,
        )
    )


def _subset(dataset: Dataset, keep_positions: list[int]) -> Dataset:
    return Dataset(
        records=tuple(dataset.records[i] for i in keep_positions),
        row_indices=tuple(dataset.row_indices[i] for i in keep_positions),
        source=dataset.source,
        n_rejected=dataset.n_rejected,
    )


def balance_zero(dataset: Dataset, seed: int) -> Dataset:
    """Downsample engagement-0 records to the median of the 11 label counts.

    The median runs over all 11 labels, zero-count labels included. When the
    zero count is already at or below the median the dataset passes through
    unchanged; non-zero labels are never touched. Surviving records keep their
    original order.
    """
    if len(dataset) == 0:
        return dataset
    counts = label_counts(dataset)
    target = statistics.median(counts)
    if counts[0] <= target:
        _log_histogram("balance_zero", dataset, dataset)
        return dataset
    target = int(target)

    zero_positions = np.array([i for i, r in enumerate(dataset.records) if r.engagement == 0])
    rng = np.random.default_rng(seed)
    kept = set(rng.choice(zero_positions, size=target, replace=False).tolist()) if target else set()
    keep = [i for i, r in enumerate(dataset.records) if r.engagement != 0 or i in kept]
    result = _subset(dataset, keep)
    _log_histogram("balance_zero", dataset, result)
    return result


def filter_impression(dataset: Dataset) -> Dataset:
    """Drop records with low impression level, preserving order."""
    keep = [i for i, r in enumerate(dataset.records) if r.impression != Impression.LOW]
    result = _subset(dataset, keep)
    _log_histogram("filter_impression", dataset, result)
    return result


def reduce_classes(dataset: Dataset) -> Dataset:
    """Map engagement to binary: 0 stays 0, anything above becomes 1."""
    records = tuple(
        r if r.engagement == 0 else ClickRecord(r.query, r.question, r.answers, r.impression, 1)
        for r in dataset.records
    )
    result = Dataset(records, dataset.row_indices, dataset.source, dataset.n_rejected)
    _log_histogram("reduce_classes", dataset, result)
    return result


def apply_preprocess(dataset: Dataset, config: PreprocessConfig) -> Dataset:
    """Apply the Boolean options in the fixed order filter -> balance -> reduce."""
    if config.impression_filter:
        dataset = filter_impression(dataset)
    if config.balance:
        dataset = balance_zero(dataset, config.seed)
    if config.reduced_classes:
        dataset = reduce_classes(dataset)
    return dataset


def _split_counts(n: int, fractions: SplitFractions) -> tuple[int, int, int]:
    # Floor rule; the remainder goes to the test split.
    n_train = int(np.floor(fractions.train * n))
    n_val = int(np.floor((fractions.train + fractions.val) * n)) - n_train
    return n_train, n_val, n - n_train - n_val


def split_rows(
    dataset: Dataset, fractions: SplitFractions, seed: int
) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded shuffle, then contiguous slicing into train/val/test.

    The three outputs partition the input; each split is re-ordered by
    provenance row so Dataset invariants hold.
    """
    n = len(dataset)
    if n < 3:
        raise DatasetTooSmall(f"need at least 3 records, got {n}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_train, n_val, _ = _split_counts(n, fractions)
    parts = (
        sorted(order[:n_train].tolist()),
        sorted(order[n_train : n_train + n_val].tolist()),
        sorted(order[n_train + n_val :].tolist()),
    )
    return tuple(_subset(dataset, p) for p in parts)  # type: ignore[return-value]


def split_queries(
    grouped: GroupedDataset, fractions: SplitFractions, seed: int
) -> tuple[GroupedDataset, GroupedDataset, GroupedDataset]:
    """Split on queries, not rows: every CP of a query lands in one split."""
    queries = list(grouped.groups.keys())
    n = len(queries)
    if n < 3:
        raise DatasetTooSmall(f"need at least 3 queries, got {n}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_train, n_val, _ = _split_counts(n, fractions)
    slices = (order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :])

    def build(index_slice) -> GroupedDataset:
        picked = [queries[i] for i in sorted(index_slice.tolist())]
        return GroupedDataset(
            groups={q: grouped.groups[q] for q in picked},
            row_indices={q: grouped.row_indices[q] for q in picked},
            source=grouped.source,
            n_rejected=grouped.n_rejected,
        )

    return tuple(build(s) for s in slices)  # type: ignore[return-value]


def add_negatives(grouped: GroupedDataset, k: int = 10, *, seed: int) -> list[CandidateGroup]:
    """Inject k negative samples per group, drawn from CPs of other queries.

    Sampling is uniform without replacement within a group; a group's own CPs
    are never eligible. Raises NotEnoughForeignCandidates when fewer than k
    CPs exist outside a group.
    """
    if len(grouped) < 2 and k > 0:
        raise NotEnoughForeignCandidates("negatives must come from a different query")

    pool: list[Candidate] = []
    for query, members in grouped.groups.items():
        for record, row_index in zip(members, grouped.row_indices[query]):
            pool.append(Candidate(record=record, row_index=row_index, is_negative=True))

    rng = np.random.default_rng(seed)
    result = []
    for query, members in grouped.groups.items():
        positives = tuple(
            Candidate(record=r, row_index=ix, is_negative=False)
            for r, ix in zip(members, grouped.row_indices[query])
        )
        if len(pool) - len(members) < k:
            raise NotEnoughForeignCandidates(
                f"query {query!r}: only {len(pool) - len(members)} foreign CPs, need {k}"
            )
        negatives: list[Candidate] = []
        picked: set[int] = set()
        while len(negatives) < k:
            i = int(rng.integers(len(pool)))
            if i in picked or pool[i].record.query == query:
                continue
            picked.add(i)
            negatives.append(pool[i])
        result.append(
            CandidateGroup(
                query=query,
                query_row_index=positives[0].row_index,
                candidates=positives + tuple(negatives),
            )
        )
    return result


def assign_relevance(group: CandidateGroup, pue_per_candidate: list[float]) -> RankGroup:
    """Assign relevance labels from predicted engagement.

    Negatives get 0; the positive(s) attaining the maximum PUE in the group
    get 2 (all ties at the max); remaining positives get 1.
    """
    if not group.candidates:
        raise EmptyGroup(f"query {group.query!r} has no candidates")
    if len(pue_per_candidate) != len(group.candidates):
        raise ValueError("need one PUE per candidate")

    positive_pues = [p for c, p in zip(group.candidates, pue_per_candidate) if not c.is_negative]
    max_pue = max(positive_pues) if positive_pues else None

    ranked = []
    for candidate, pue in zip(group.candidates, pue_per_candidate):
        if candidate.is_negative:
            relevance = 0
        elif pue == max_pue:
            relevance = 2
        else:
            relevance = 1
        ranked.append(
            RankCandidate(
                record=candidate.record,
                row_index=candidate.row_index,
                is_negative=candidate.is_negative,
                relevance=relevance,
                pue=float(pue),
            )
        )
    return RankGroup(query=group.query, query_row_index=group.query_row_index, candidates=tuple(ranked))
