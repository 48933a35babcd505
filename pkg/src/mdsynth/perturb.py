"""Sensitivity harnesses: input-order permutation and input-composition studies.

A permutation study decodes the same instance under many seeded random
orderings and quantifies the spread of the measured output property
(zero-meaned values for continuous tasks; the fraction reporting a
significant effect, and its entropy in bits, for binary tasks).

A composition study deletes growing fractions of one polarity's documents,
re-decodes, and fits a line of output measure against input aggregate; a
perfectly calibrated responder has slope 1.

The significance-flip construction removes the strongest weighted studies
until a recomputed fixed-effects meta-analysis crosses the 0.05 boundary.
"""

from __future__ import annotations

import math
import random
import statistics
from dataclasses import dataclass, replace

from .aggregate import MetaAnalysisResult, fixed_effects_meta_analysis, fraction_positive
from .corpus import Document, Instance, Task, linearize, permute_documents
from .decode import Generator
from .errors import DomainError, PipelineError, StudySkipped
from .measure import Kind, Label, Measurer, binarize
from .metrics import rouge1_f

DEFAULT_FRACTIONS = tuple(round(0.1 * i, 1) for i in range(1, 11))


@dataclass(frozen=True)
class PermutationStudy:
    instance_id: str
    n_permutations: int
    per_permutation_measures: tuple[float, ...] | tuple[Label, ...]
    spread: tuple[float, ...] = ()
    p_fraction: float | None = None
    entropy_bits: float | None = None
    rouge1: tuple[float, ...] = ()


@dataclass(frozen=True)
class SchedulePoint:
    fraction_removed: float
    polarity_removed: str  # positive | negative

    def __post_init__(self):
        if not 0.0 < self.fraction_removed <= 1.0:
            raise DomainError("fraction_removed must lie in (0,1]")
        if self.polarity_removed not in ("positive", "negative"):
            raise DomainError(f"unknown polarity {self.polarity_removed!r}")


@dataclass(frozen=True)
class CompositionPoint:
    fraction_removed: float  # 0.0 marks the unmodified baseline
    polarity_removed: str  # positive | negative | none
    input_aggregate: float
    output_measure: float
    n_documents: int
    flagged: bool = False  # the all-of-one-polarity-removed point


@dataclass(frozen=True)
class CompositionStudy:
    instance_id: str
    schedule: tuple[SchedulePoint, ...]
    points: tuple[CompositionPoint, ...]
    fitted_slope: float
    fitted_intercept: float


@dataclass(frozen=True)
class FlipConstruction:
    instance_id: str
    removed_document_ids: tuple[str, ...]
    before: MetaAnalysisResult
    after: MetaAnalysisResult

    def __post_init__(self):
        if self.before.significant == self.after.significant:
            raise DomainError("flip construction must change significance")


def binary_entropy(p: float) -> float:
    """Entropy of a Bernoulli(p) in bits, with 0*log0 = 0."""
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"p must lie in [0,1], got {p}")
    if p in (0.0, 1.0):
        return 0.0
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def _top_text(candidates) -> str:
    return candidates.candidates[0].text


def run_permutation_study(
    instance: Instance,
    generator: Generator,
    measurer: Measurer,
    n: int = 100,
    seed: int = 0,
    separator: str = "<doc>",
    max_input_tokens: int | None = None,
) -> PermutationStudy:
    """Decode and measure an instance under n seeded random input orderings."""
    if n < 2:
        raise DomainError("permutation studies need n >= 2")
    rng = random.Random(seed)
    measures: list = []
    rouge_scores: list[float] = []
    for index in range(n):
        perm_seed = rng.getrandbits(32)
        try:
            permuted = permute_documents(instance, perm_seed)
            text = linearize(permuted, separator, max_input_tokens).text
            summary = _top_text(generator(text))
            measurement = measurer.measure_text(summary)
        except Exception as exc:
            raise PipelineError(
                "permutation", f"permutation {index}: {exc}", instance_id=instance.id
            ) from exc
        rouge_scores.append(rouge1_f(summary, instance.reference_summary))
        if instance.task is Task.CONTINUOUS:
            if measurement.kind is not Kind.CONTINUOUS:
                raise DomainError("continuous task needs a continuous measurer")
            measures.append(measurement.value)
        else:
            if measurement.kind is not Kind.BINARY:
                raise DomainError("binary task needs a binary measurer")
            measures.append(measurement.label)

    if instance.task is Task.CONTINUOUS:
        mean = math.fsum(measures) / n
        spread = tuple(v - mean for v in measures)
        return PermutationStudy(
            instance_id=instance.id,
            n_permutations=n,
            per_permutation_measures=tuple(measures),
            spread=spread,
            rouge1=tuple(rouge_scores),
        )
    p = sum(1 for lab in measures if lab is Label.SIGNIFICANT) / n
    return PermutationStudy(
        instance_id=instance.id,
        n_permutations=n,
        per_permutation_measures=tuple(measures),
        p_fraction=p,
        entropy_bits=binary_entropy(p),
        rouge1=tuple(rouge_scores),
    )


def default_schedule() -> tuple[SchedulePoint, ...]:
    points = [SchedulePoint(f, "positive") for f in DEFAULT_FRACTIONS]
    points += [SchedulePoint(f, "negative") for f in DEFAULT_FRACTIONS]
    return tuple(points)


def _removal_count(fraction: float, available: int) -> int:
    return int(math.floor(fraction * available + 0.5))


def run_composition_study(
    instance: Instance,
    generator: Generator,
    measurer: Measurer,
    threshold: float = 0.5,
    schedule: tuple[SchedulePoint, ...] | None = None,
    separator: str = "<doc>",
    max_input_tokens: int | None = None,
    removal_order: str = "weakest_first",
    seed: int = 0,
) -> CompositionStudy:
    """Manipulate the positive/negative document ratio and fit the response.

    At each schedule point the stated polarity's documents are removed
    weakest-first (smallest |measure - threshold|) by default;
    removal_order="seeded_random" removes a seeded random subset instead.
    The remaining documents keep their original relative order. The
    100%-removed point leaves only the other polarity and is flagged.
    """
    if removal_order not in ("weakest_first", "seeded_random"):
        raise DomainError(f"unknown removal_order {removal_order!r}")
    schedule = default_schedule() if schedule is None else schedule
    doc_measures = measurer.measure_batch([d.text for d in instance.documents])
    if any(m.kind is not Kind.CONTINUOUS for m in doc_measures):
        raise DomainError("composition studies need a continuous measurer")
    polarity = [
        "positive" if binarize(m, threshold).label is Label.POSITIVE else "negative"
        for m in doc_measures
    ]
    by_polarity = {
        "positive": [i for i, p in enumerate(polarity) if p == "positive"],
        "negative": [i for i, p in enumerate(polarity) if p == "negative"],
    }
    if not by_polarity["positive"] or not by_polarity["negative"]:
        raise StudySkipped(
            f"instance {instance.id!r} is not mixed under threshold {threshold}"
        )

    def decode_measure(docs: tuple[Document, ...]) -> float:
        modified = replace(instance, documents=docs)
        text = linearize(modified, separator, max_input_tokens).text
        summary = _top_text(generator(text))
        m = measurer.measure_text(summary)
        if m.kind is not Kind.CONTINUOUS:
            raise DomainError("composition studies need a continuous measurer")
        return m.value

    values = [m.value for m in doc_measures]
    points = [
        CompositionPoint(
            fraction_removed=0.0,
            polarity_removed="none",
            input_aggregate=fraction_positive(doc_measures, threshold),
            output_measure=decode_measure(instance.documents),
            n_documents=len(instance.documents),
        )
    ]
    rng = random.Random(seed)
    for sp in schedule:
        pool = by_polarity[sp.polarity_removed]
        if removal_order == "weakest_first":
            # Weakest first: closest to the threshold goes before stronger ones.
            ordered = sorted(pool, key=lambda i: (abs(values[i] - threshold), i))
        else:
            ordered = list(pool)
            rng.shuffle(ordered)
        removed = set(ordered[: _removal_count(sp.fraction_removed, len(pool))])
        kept_idx = [i for i in range(len(instance.documents)) if i not in removed]
        kept_docs = tuple(instance.documents[i] for i in kept_idx)
        kept_measures = [doc_measures[i] for i in kept_idx]
        if not kept_docs:
            raise PipelineError(
                "composition", "schedule removed every document", instance_id=instance.id
            )
        points.append(
            CompositionPoint(
                fraction_removed=sp.fraction_removed,
                polarity_removed=sp.polarity_removed,
                input_aggregate=fraction_positive(kept_measures, threshold),
                output_measure=decode_measure(kept_docs),
                n_documents=len(kept_docs),
                flagged=sp.fraction_removed == 1.0,
            )
        )

    xs = [p.input_aggregate for p in points]
    ys = [p.output_measure for p in points]
    try:
        slope, intercept = statistics.linear_regression(xs, ys)
    except statistics.StatisticsError as exc:
        raise DomainError(f"cannot fit composition response: {exc}") from exc
    return CompositionStudy(
        instance_id=instance.id,
        schedule=tuple(schedule),
        points=tuple(points),
        fitted_slope=slope,
        fitted_intercept=intercept,
    )


def construct_significance_flip(instance: Instance) -> FlipConstruction:
    """Greedily remove the largest |weighted effect| studies until the
    recomputed meta-analysis flips significance; at least one document must
    survive."""
    docs = instance.documents
    for d in docs:
        if d.effect is None or d.variance is None:
            raise DomainError(f"document {d.id!r} lacks (effect, variance)")
    before = fixed_effects_meta_analysis([(d.effect, d.variance) for d in docs])

    order = sorted(docs, key=lambda d: (-abs(d.effect / d.variance), d.id))
    removed: list[str] = []
    remaining = list(docs)
    for doc in order[: len(docs) - 1]:
        remaining.remove(doc)
        removed.append(doc.id)
        after = fixed_effects_meta_analysis([(d.effect, d.variance) for d in remaining])
        if after.significant != before.significant:
            return FlipConstruction(
                instance_id=instance.id,
                removed_document_ids=tuple(removed),
                before=before,
                after=after,
            )
    raise DomainError(f"instance {instance.id!r} not flippable")
