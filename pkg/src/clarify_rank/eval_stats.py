"""Ranking metrics (NDCG, MRR), classification diagnostics, and the paired
two-sided t-test used for significance testing.

The Student-t tail probability is computed from scratch via the regularized
incomplete beta function (continued-fraction expansion), so p-values carry no
external dependency.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import exp, inf, lgamma, log, sqrt
from pathlib import Path

import numpy as np


class EmptyList(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class IndexOutOfRange(ValueError):
    pass


class TooFewSamples(ValueError):
    pass


def _dcg(relevances: np.ndarray) -> float:
    # Exponential gain, log2 position discount; positions start at 1.
    positions = np.arange(2, relevances.size + 2)
    return float(((2.0**relevances - 1.0) / np.log2(positions)).sum())


def ndcg(relevances_in_ranked_order) -> float:
    """Normalized discounted cumulative gain of a ranking, in [0, 1].

    Gain is 2^rel - 1 with a log2(pos + 1) discount; the ideal ranking is the
    descending sort of the same labels. An all-zero list has no ideal gain and
    returns 0.0 by convention.
    """
    rels = np.asarray(relevances_in_ranked_order, dtype=np.float64)
    if rels.size == 0:
        raise EmptyList("ndcg of an empty ranking")
    if (rels < 0).any():
        raise ValueError("relevances must be >= 0")
    ideal = _dcg(np.sort(rels)[::-1])
    if ideal == 0.0:
        return 0.0
    return _dcg(rels) / ideal


def mrr(relevances_in_ranked_order) -> float:
    """Reciprocal rank of the first item with relevance >= 1; 0 if none."""
    rels = np.asarray(relevances_in_ranked_order, dtype=np.float64)
    if rels.size == 0:
        raise EmptyList("mrr of an empty ranking")
    hits = np.nonzero(rels >= 1)[0]
    if hits.size == 0:
        return 0.0
    return 1.0 / (int(hits[0]) + 1)


@dataclass(frozen=True)
class ConfusionMatrix:
    """Absolute counts; rows are true classes, columns predicted."""

    n_classes: int
    counts: np.ndarray

    @property
    def n_samples(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        total = self.counts.sum()
        if total == 0:  # undefined; reported as 0 so callers must check n_samples
            return 0.0
        return float(np.trace(self.counts) / total)

    def to_csv(self, path: str | Path) -> None:
        lines = ["true\\pred," + ",".join(str(c) for c in range(self.n_classes))]
        for t in range(self.n_classes):
            lines.append(str(t) + "," + ",".join(str(int(v)) for v in self.counts[t]))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def confusion(true_classes, predicted_classes, n_classes: int) -> ConfusionMatrix:
    true_arr = np.asarray(true_classes, dtype=np.int64)
    pred_arr = np.asarray(predicted_classes, dtype=np.int64)
    if true_arr.shape != pred_arr.shape:
        raise LengthMismatch(f"true {true_arr.shape} vs predicted {pred_arr.shape}")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    if true_arr.size:
        if true_arr.min() < 0 or true_arr.max() >= n_classes:
            raise IndexOutOfRange("true class outside [0, n_classes)")
        if pred_arr.min() < 0 or pred_arr.max() >= n_classes:
            raise IndexOutOfRange("predicted class outside [0, n_classes)")
        np.add.at(counts, (true_arr, pred_arr), 1)
    return ConfusionMatrix(n_classes=n_classes, counts=counts)


def _betacf(a: float, b: float, x: float) -> float:
    """Continued-fraction expansion of the incomplete beta integral
    (modified Lentz iteration)."""
    max_iter = 300
    tiny = 1e-300
    tol = 3e-16
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise RuntimeError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b), evaluated on whichever side of the integral converges fast."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = lgamma(a + b) - lgamma(a) - lgamma(b) + a * log(x) + b * log(1.0 - x)
    front = exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, dof: int) -> float:
    """P(|T| >= |t|) for Student's t with ``dof`` degrees of freedom."""
    if dof < 1:
        raise ValueError("dof must be >= 1")
    return regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t))


@dataclass(frozen=True)
class TTestResult:
    t_statistic: float
    p_value: float
    n: int
    mean_diff: float

    @property
    def significant(self) -> bool:
        return self.p_value < 0.05


def paired_ttest(a, b) -> TTestResult:
    """Paired two-sided t-test on equal-length samples.

    Uses the sample standard deviation (n-1) of the differences. When all
    differences are identical the statistic degenerates: p = 1 for zero mean
    difference, p = 0 otherwise.
    """
    a_arr = np.asarray(a, dtype=np.float64)
    b_arr = np.asarray(b, dtype=np.float64)
    if a_arr.shape != b_arr.shape:
        raise LengthMismatch(f"a {a_arr.shape} vs b {b_arr.shape}")
    n = a_arr.size
    if n < 2:
        raise TooFewSamples("paired t-test needs at least 2 pairs")

    d = a_arr - b_arr
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(t_statistic=0.0, p_value=1.0, n=n, mean_diff=0.0)
        return TTestResult(t_statistic=inf if mean > 0 else -inf, p_value=0.0, n=n, mean_diff=mean)

    t = mean / (sd / sqrt(n))
    return TTestResult(t_statistic=t, p_value=student_t_two_sided_p(t, n - 1), n=n, mean_diff=mean)
