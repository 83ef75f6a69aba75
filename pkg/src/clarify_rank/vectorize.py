"""Model inputs: from-scratch TFIDF with a capped vocabulary, the EMB1 dense
embedding file format, and the 4/5-dimensional ranker feature vectors.
"""

from __future__ import annotations

import json
import math
import re
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .data_ingest import ClickRecord
from .preprocess import RankGroup

MAX_VOCAB = 30_000
FIELD_DIM = 768
N_EMBED_FIELDS = 7  # query, question, 5 answer slots
EMBEDDING_DIM = FIELD_DIM * N_EMBED_FIELDS  # 5376
EMB_MAGIC = b"EMB1"

_TOKEN_RE = re.compile(r"[^\W_]+")  # maximal alphanumeric runs, no underscore


class EmbeddingFileError(ValueError):
    pass


class BadMagic(EmbeddingFileError):
    pass


class DimMismatch(EmbeddingFileError):
    pass


class TruncatedPayload(EmbeddingFileError):
    pass


class EmptyCorpus(ValueError):
    pass


def record_text(query: str, question: str, answers: tuple[str, ...]) -> str:
    """Document text for one CP: query, question and answers joined by spaces,
    lowercased."""
    return (query + " " + question + " " + " ".join(answers)).lower()


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class SparseVec:
    dims: int
    entries: tuple[tuple[int, float], ...]  # sorted by index

    def norm(self) -> float:
        return math.sqrt(sum(v * v for _, v in self.entries))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dims)
        for i, v in self.entries:
            out[i] = v
        return out


class TfidfModel:
    """Fitted vocabulary (document-frequency top terms) plus IDF weights.

    idf(t) = ln((1 + N) / (1 + df(t))) + 1; transforms are raw counts times
    IDF, L2-normalized. The model is immutable once fitted.
    """

    def __init__(self, vocab: dict[str, int], idf: np.ndarray):
        if sorted(vocab.values()) != list(range(len(vocab))):
            raise ValueError("vocab indices must be a bijection onto 0..V-1")
        self.vocab = vocab
        self.idf = np.asarray(idf, dtype=np.float64)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def to_json(self) -> str:
        terms = sorted(self.vocab, key=self.vocab.get)
        return json.dumps({"terms": terms, "idf": [self.idf[self.vocab[t]] for t in terms]})

    @classmethod
    def from_json(cls, text: str) -> "TfidfModel":
        payload = json.loads(text)
        vocab = {term: i for i, term in enumerate(payload["terms"])}
        return cls(vocab, np.array(payload["idf"], dtype=np.float64))


def tfidf_fit(corpus: list[ClickRecord], vocab_size: int = MAX_VOCAB) -> TfidfModel:
    """Fit vocabulary and IDF weights on a corpus of CP records.

    The vocabulary keeps the top ``vocab_size`` terms by document frequency
    (ties broken lexicographically); column indices follow lexicographic term
    order, so refitting on any permutation of the corpus gives an identical
    model.
    """
    if not corpus:
        raise EmptyCorpus("cannot fit TFIDF on an empty corpus")
    df: Counter[str] = Counter()
    for record in corpus:
        tokens = set(tokenize(record_text(record.query, record.question, record.answers)))
        df.update(tokens)

    selected = sorted(df, key=lambda t: (-df[t], t))[:vocab_size]
    vocab = {term: i for i, term in enumerate(sorted(selected))}
    n_docs = len(corpus)
    idf = np.zeros(len(vocab))
    for term, col in vocab.items():
        idf[col] = math.log((1 + n_docs) / (1 + df[term])) + 1.0
    return TfidfModel(vocab, idf)


def tfidf_transform(model: TfidfModel, record: ClickRecord) -> SparseVec:
    """Transform one record to an L2-normalized sparse vector.

    Out-of-vocabulary tokens are dropped; an all-OOV document yields the zero
    vector (norm left at 0).
    """
    return tfidf_transform_text(model, record_text(record.query, record.question, record.answers))


def tfidf_transform_text(model: TfidfModel, text: str) -> SparseVec:
    counts = Counter(tokenize(text))
    entries = []
    for term, count in counts.items():
        col = model.vocab.get(term)
        if col is not None:
            entries.append((col, count * model.idf[col]))
    entries.sort()
    norm = math.sqrt(sum(v * v for _, v in entries))
    if norm > 0:
        entries = [(i, v / norm) for i, v in entries]
    return SparseVec(dims=model.vocab_size, entries=tuple(entries))


def tfidf_matrix(model: TfidfModel, texts: list[str]) -> sp.csr_matrix:
    """Stack transforms of many documents into a CSR matrix."""
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for text in texts:
        vec = tfidf_transform_text(model, text)
        for i, v in vec.entries:
            indices.append(i)
            data.append(v)
        indptr.append(len(indices))
    return sp.csr_matrix(
        (np.array(data), np.array(indices, dtype=np.int64), np.array(indptr, dtype=np.int64)),
        shape=(len(texts), model.vocab_size),
    )


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Row-major dense embeddings; row i is aligned to dataset provenance row i."""

    values: np.ndarray  # (n_rows, EMBEDDING_DIM) float32

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def load_embeddings(path: str | Path) -> EmbeddingMatrix:
    """Read an EMB1 file.

    Layout: 4 bytes ASCII "EMB1", u32-LE n_rows, u32-LE dim (must be 5376),
    then n_rows*dim IEEE-754 LE float32, row-major.
    """
    raw = Path(path).read_bytes()
    if raw[:4] != EMB_MAGIC:
        raise BadMagic(f"{path}: expected magic {EMB_MAGIC!r}, got {raw[:4]!r}")
    if len(raw) < 12:
        raise TruncatedPayload(f"{path}: header truncated")
    n_rows, dim = struct.unpack("<II", raw[4:12])
    if dim != EMBEDDING_DIM:
        raise DimMismatch(f"{path}: expected dim {EMBEDDING_DIM}, got {dim}")
    expected = n_rows * dim * 4
    payload = raw[12:]
    if len(payload) < expected:
        raise TruncatedPayload(f"{path}: payload holds {len(payload)} bytes, need {expected}")
    if len(payload) > expected:
        raise EmbeddingFileError(f"{path}: {len(payload) - expected} trailing bytes")
    values = np.frombuffer(payload, dtype="<f4").reshape(n_rows, dim).copy()
    return EmbeddingMatrix(values=values)


def save_embeddings(matrix: EmbeddingMatrix | np.ndarray, path: str | Path) -> None:
    values = matrix.values if isinstance(matrix, EmbeddingMatrix) else np.asarray(matrix)
    if values.ndim != 2 or values.shape[1] != EMBEDDING_DIM:
        raise DimMismatch(f"expected shape (n, {EMBEDDING_DIM}), got {values.shape}")
    header = EMB_MAGIC + struct.pack("<II", values.shape[0], values.shape[1])
    Path(path).write_bytes(header + np.ascontiguousarray(values, dtype="<f4").tobytes())


@dataclass(frozen=True)
class RankerFeatures:
    """Standardized per-candidate features; 5-dimensional when PUE is present."""

    qlen: float
    question_len: float
    n_answers: float
    mean_answer_len: float
    pue: float | None = None

    def as_array(self) -> np.ndarray:
        base = [self.qlen, self.question_len, self.n_answers, self.mean_answer_len]
        if self.pue is not None:
            base.append(self.pue)
        return np.array(base)


def raw_rank_features(query: str, record: ClickRecord) -> np.ndarray:
    """Unstandardized (qlen, question_len, n_answers, mean_answer_len).

    Character counts; a CP without answers gets mean_answer_len 0.
    """
    n = len(record.answers)
    mean_len = sum(len(a) for a in record.answers) / n if n else 0.0
    return np.array([len(query), len(record.question), n, mean_len], dtype=np.float64)


class StandardizationStats:
    """Per-dimension z-score parameters, fitted on the ranker training split only."""

    def __init__(self, mean: np.ndarray, scale: np.ndarray):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)

    @classmethod
    def fit(cls, features: np.ndarray) -> "StandardizationStats":
        mean = features.mean(axis=0)
        std = features.std(axis=0)
        scale = np.where(std > 0, std, 1.0)  # constant features pass through centered
        return cls(mean, scale)

    def apply(self, raw: np.ndarray) -> np.ndarray:
        d = raw.shape[-1]
        return (raw - self.mean[:d]) / self.scale[:d]


def ranker_features(
    query: str,
    record: ClickRecord,
    pue: float | None,
    stats: StandardizationStats,
) -> RankerFeatures:
    """Standardized feature vector for one candidate; 5-dim iff PUE given."""
    raw = raw_rank_features(query, record)
    if pue is not None:
        raw = np.append(raw, pue)
    z = stats.apply(raw)
    return RankerFeatures(
        qlen=z[0],
        question_len=z[1],
        n_answers=z[2],
        mean_answer_len=z[3],
        pue=z[4] if pue is not None else None,
    )


@dataclass(frozen=True)
class FeatureGroup:
    """One query's candidates as a ready-to-train feature matrix."""

    query: str
    features: np.ndarray  # (n_candidates, 4 or 5) float64, standardized
    relevance: np.ndarray  # (n_candidates,) int64


def raw_group_features(group: RankGroup) -> np.ndarray:
    """Raw 5-dim feature rows (4 lexical + PUE) for every candidate of a group.

    Lexical features always use the host group's query text, including for
    injected negatives.
    """
    rows = [
        np.append(raw_rank_features(group.query, c.record), c.pue) for c in group.candidates
    ]
    return np.stack(rows)


def fit_feature_stats(groups: list[RankGroup]) -> StandardizationStats:
    """Fit z-score stats on the raw 5-dim features of the training groups."""
    stacked = np.concatenate([raw_group_features(g) for g in groups])
    return StandardizationStats.fit(stacked)


def build_feature_groups(
    groups: list[RankGroup], stats: StandardizationStats, with_pue: bool
) -> list[FeatureGroup]:
    """Standardize per-candidate features; drop the PUE column when ablated."""
    out = []
    for group in groups:
        raw = raw_group_features(group)
        if not with_pue:
            raw = raw[:, :4]
        out.append(
            FeatureGroup(
                query=group.query,
                features=stats.apply(raw),
                relevance=np.array(group.relevances(), dtype=np.int64),
            )
        )
    return out
