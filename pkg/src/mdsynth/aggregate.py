"""Aggregation functions over per-document measures.

The normalized weighted mean keeps outputs on the measure's scale for any
non-negative weights; fixed-effects meta-analysis pools study effects with
inverse-variance weights and reads significance off the two-sided normal
tail of the pooled z-score at 0.05.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .errors import DomainError
from .measure import Kind, Label, Measurement, binarize

SIGNIFICANCE_LEVEL = 0.05


class AggregateKind(str, Enum):
    MEAN = "mean"
    FRACTION_POSITIVE = "fraction_positive"
    MAJORITY_VOTE = "majority_vote"
    META_ANALYSIS = "meta_analysis"


@dataclass(frozen=True)
class AggregateTarget:
    kind: AggregateKind
    value: float
    label: Label | None = None
    p_value: float | None = None

    def __post_init__(self):
        if self.kind is AggregateKind.FRACTION_POSITIVE and not 0.0 <= self.value <= 1.0:
            raise DomainError(f"fraction_positive value must lie in [0,1], got {self.value}")
        if (self.p_value is not None) != (self.kind is AggregateKind.META_ANALYSIS):
            raise DomainError("p_value is present iff kind is meta_analysis")


@dataclass(frozen=True)
class MetaAnalysisResult:
    pooled_effect: float
    standard_error: float
    z_score: float
    p_value: float
    significant: bool

    def __post_init__(self):
        if self.standard_error <= 0:
            raise DomainError("standard_error must be positive")
        if not 0.0 < self.p_value <= 1.0:
            raise DomainError(f"p_value must lie in (0,1], got {self.p_value}")
        if self.significant != (self.p_value < SIGNIFICANCE_LEVEL):
            raise DomainError("significant flag disagrees with p_value < 0.05")


def weighted_mean(measures: Sequence[float], weights: Sequence[float]) -> float:
    """Normalized weighted mean: sum(w*z) / sum(w)."""
    if len(measures) != len(weights):
        raise DomainError("measures and weights must have equal length")
    if not measures:
        raise DomainError("weighted_mean of empty input")
    if any(w < 0 for w in weights):
        raise DomainError("weights must be non-negative")
    total = math.fsum(weights)
    if total <= 0:
        raise DomainError("weights sum to zero")
    return math.fsum(w * z for w, z in zip(weights, measures)) / total


def fraction_positive(
    measures: Sequence[Measurement | float], threshold: float = 0.5
) -> float:
    """Fraction of measures whose binarized label is positive (ties go up)."""
    if not measures:
        raise DomainError("fraction_positive of empty input")
    positive = 0
    for m in measures:
        if isinstance(m, Measurement):
            if m.kind is Kind.BINARY:
                positive += m.label is Label.POSITIVE
                continue
        else:
            m = Measurement.continuous(m)
        positive += binarize(m, threshold).label is Label.POSITIVE
    return positive / len(measures)


def majority_vote(labels: Sequence[Label]) -> Label:
    """Label with the strictly greater count; an exact tie is not_significant."""
    if not labels:
        raise DomainError("majority_vote of empty input")
    n_sig = sum(1 for lab in labels if lab is Label.SIGNIFICANT)
    return Label.SIGNIFICANT if n_sig * 2 > len(labels) else Label.NOT_SIGNIFICANT


def normal_two_sided_p(z: float) -> float:
    """Two-sided tail probability of the standard normal via erfc.

    p = erfc(|z| / sqrt(2)); agrees with standard normal tables to better
    than 1e-10 over |z| <= 6. Clamped away from 0 so extreme z keeps p in
    (0,1].
    """
    p = math.erfc(abs(z) / math.sqrt(2.0))
    return min(1.0, max(p, math.ulp(0.0)))


def fixed_effects_meta_analysis(
    studies: Sequence[tuple[float, float]]
) -> MetaAnalysisResult:
    """Inverse-variance pooling of (effect, variance) pairs.

    w_j = 1/v_j; pooled = sum(w*theta)/sum(w); SE = 1/sqrt(sum(w));
    z = pooled/SE; p is the two-sided normal tail; significant iff p < 0.05.
    """
    if not studies:
        raise DomainError("meta-analysis of empty study list")
    for effect, variance in studies:
        if variance <= 0:
            raise DomainError(f"variance must be positive, got {variance}")
    weights = [1.0 / v for _, v in studies]
    total_w = math.fsum(weights)
    pooled = math.fsum(w * e for w, (e, _) in zip(weights, studies)) / total_w
    se = 1.0 / math.sqrt(total_w)
    z = pooled / se
    p = normal_two_sided_p(z)
    return MetaAnalysisResult(
        pooled_effect=pooled,
        standard_error=se,
        z_score=z,
        p_value=p,
        significant=p < SIGNIFICANCE_LEVEL,
    )


def meta_analysis_target(result: MetaAnalysisResult) -> AggregateTarget:
    label = Label.SIGNIFICANT if result.significant else Label.NOT_SIGNIFICANT
    return AggregateTarget(
        kind=AggregateKind.META_ANALYSIS,
        value=result.pooled_effect,
        label=label,
        p_value=result.p_value,
    )
