"""Evaluation statistics: centered R^2, MSE, Pearson r, macro-F1, accuracy,
unigram ROUGE F1, and histogram binning for plot emission."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .errors import DomainError
from .measure import Label


@dataclass(frozen=True)
class PairedSeries:
    predictions: tuple[float, ...]
    targets: tuple[float, ...]

    def __post_init__(self):
        if len(self.predictions) != len(self.targets):
            raise DomainError("predictions and targets must have equal length")

    @staticmethod
    def of(predictions: Sequence[float], targets: Sequence[float]) -> "PairedSeries":
        return PairedSeries(tuple(predictions), tuple(targets))


@dataclass(frozen=True)
class ConfusionCounts:
    true_positive: int
    false_positive: int
    false_negative: int
    true_negative: int

    def __post_init__(self):
        if min(self.true_positive, self.false_positive, self.false_negative, self.true_negative) < 0:
            raise DomainError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.true_positive + self.false_positive + self.false_negative + self.true_negative

    def f1(self) -> float:
        denom = 2 * self.true_positive + self.false_positive + self.false_negative
        return 2 * self.true_positive / denom if denom else 0.0


def _require_correlation_input(series: PairedSeries) -> None:
    if len(series.targets) < 2:
        raise DomainError("correlation statistics need at least 2 points")


def r_squared_centered(series: PairedSeries) -> float:
    """1 - sum((t-p)^2) / sum((t-mean(t))^2)."""
    _require_correlation_input(series)
    t_mean = math.fsum(series.targets) / len(series.targets)
    ss_tot = math.fsum((t - t_mean) ** 2 for t in series.targets)
    if ss_tot == 0:
        raise DomainError("targets have zero variance")
    ss_res = math.fsum((t - p) ** 2 for t, p in zip(series.targets, series.predictions))
    return 1.0 - ss_res / ss_tot


def pearson(series: PairedSeries) -> float:
    """Product-moment correlation in [-1, 1]."""
    _require_correlation_input(series)
    n = len(series.targets)
    p_mean = math.fsum(series.predictions) / n
    t_mean = math.fsum(series.targets) / n
    cov = math.fsum((p - p_mean) * (t - t_mean) for p, t in zip(series.predictions, series.targets))
    var_p = math.fsum((p - p_mean) ** 2 for p in series.predictions)
    var_t = math.fsum((t - t_mean) ** 2 for t in series.targets)
    if var_p == 0 or var_t == 0:
        raise DomainError("pearson undefined for zero-variance series")
    r = cov / math.sqrt(var_p * var_t)
    return max(-1.0, min(1.0, r))


def mse(series: PairedSeries) -> float:
    if not series.targets:
        raise DomainError("mse of empty series")
    return math.fsum((t - p) ** 2 for t, p in zip(series.targets, series.predictions)) / len(
        series.targets
    )


def confusion_counts(
    predicted: Sequence[Label], gold: Sequence[Label], positive: Label
) -> ConfusionCounts:
    tp = fp = fn = tn = 0
    for p, g in zip(predicted, gold):
        if p is positive and g is positive:
            tp += 1
        elif p is positive:
            fp += 1
        elif g is positive:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp, fp, fn, tn)


def macro_f1_accuracy(
    predicted: Sequence[Label], gold: Sequence[Label]
) -> tuple[float, float]:
    """Unweighted mean of per-class F1 over both classes, plus exact-match rate.

    A class with zero support still contributes F1 = 0 to the average.
    """
    if len(predicted) != len(gold):
        raise DomainError("predicted and gold must have equal length")
    if not gold:
        raise DomainError("macro_f1_accuracy of empty input")
    f1s = [
        confusion_counts(predicted, gold, positive=cls).f1()
        for cls in (Label.SIGNIFICANT, Label.NOT_SIGNIFICANT)
    ]
    accuracy = sum(1 for p, g in zip(predicted, gold) if p is g) / len(gold)
    return sum(f1s) / len(f1s), accuracy


def rouge1_f(candidate: str, reference: str) -> float:
    """Unigram clipped-overlap F1 over lowercased whitespace tokens.

    No stemming, no stopword removal. Both strings empty scores 1.0; exactly
    one empty scores 0.0.
    """
    cand = candidate.lower().split()
    ref = reference.lower().split()
    if not cand and not ref:
        return 1.0
    if not cand or not ref:
        return 0.0
    cand_counts = Counter(cand)
    ref_counts = Counter(ref)
    overlap = sum(min(cand_counts[t], ref_counts[t]) for t in cand_counts)
    precision = overlap / len(cand)
    recall = overlap / len(ref)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def histogram(
    values: Sequence[float], bins: int, value_range: tuple[float, float] | None = None
) -> list[tuple[float, float, int]]:
    """Uniform-width bins, right-open except the last (closed) bin.

    Counts always sum to the input length: with an explicit range, values
    outside it land in the nearest edge bin. A degenerate observed range
    (all values equal) widens to +-0.5 around the value.
    """
    if bins < 1:
        raise DomainError("bins must be >= 1")
    if value_range is not None:
        lo, hi = value_range
        if lo >= hi:
            raise DomainError(f"histogram range requires lo < hi, got ({lo}, {hi})")
    elif not values:
        lo, hi = 0.0, 1.0
    else:
        lo, hi = min(values), max(values)
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
    width = (hi - lo) / bins
    counts = [0] * bins
    for v in values:
        idx = int((v - lo) / width)
        counts[max(0, min(bins - 1, idx))] += 1
    return [(lo + i * width, lo + (i + 1) * width, counts[i]) for i in range(bins)]
