"""Candidate selection: pick the output best aligned with the expected
aggregate, or abstain when no candidate agrees with it."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

from .aggregate import (
    AggregateKind,
    AggregateTarget,
    fraction_positive,
    majority_vote,
)
from .corpus import Instance, linearize
from .decode import Candidate, CandidateSet, Generator
from .errors import DomainError, PipelineError
from .measure import Kind, Label, Measurement, Measurer

ABSTAIN_NO_MATCH = "no candidate matches target label"


class PolicyKind(str, Enum):
    NEAREST_CONTINUOUS = "nearest_continuous"
    AGREE_OR_ABSTAIN = "agree_or_abstain"
    ORACLE_NEAREST = "oracle_nearest"
    ORACLE_AGREE = "oracle_agree"


@dataclass(frozen=True)
class SelectionPolicy:
    kind: PolicyKind = PolicyKind.NEAREST_CONTINUOUS
    threshold: float = 0.5
    # Continuous-task abstention knob: abstain when the best candidate is
    # farther than this from the target. Off by default.
    max_distance: float | None = None
    # For oracle selection on the opinion task: target the gold aggregate or
    # the measured reference summary.
    oracle_source: str = "gold"  # gold | reference_measure

    @property
    def is_oracle(self) -> bool:
        return self.kind in (PolicyKind.ORACLE_NEAREST, PolicyKind.ORACLE_AGREE)

    @property
    def is_binary(self) -> bool:
        return self.kind in (PolicyKind.AGREE_OR_ABSTAIN, PolicyKind.ORACLE_AGREE)


@dataclass(frozen=True)
class Provenance:
    document_measures: tuple[Measurement, ...] = ()
    candidate_measures: tuple[Measurement, ...] = ()
    notes: tuple[str, ...] = ()


@dataclass(frozen=True)
class SelectionOutcome:
    status: str  # selected | abstained
    target: AggregateTarget
    candidate: Candidate | None = None
    reason: str | None = None
    provenance: Provenance | None = None

    def __post_init__(self):
        if (self.status == "selected") != (self.candidate is not None):
            raise DomainError("selected outcomes carry a candidate; abstentions do not")
        if (self.status == "abstained") != (self.reason is not None):
            raise DomainError("abstentions carry a reason; selections do not")

    @property
    def abstained(self) -> bool:
        return self.status == "abstained"


def _measured_value(cand: Candidate, measurer: Measurer | None) -> Measurement:
    if measurer is not None:
        m = measurer.measure_text(cand.text)
    elif cand.measurement is not None:
        m = cand.measurement
    else:
        raise DomainError(f"candidate {cand.text!r} has no measurement and no measurer was given")
    return m


def _logp_rank(cand: Candidate) -> float:
    # Candidates without log-probs rank below any with one in ties.
    return cand.log_prob if cand.log_prob is not None else -math.inf


def select_nearest(
    candidates: CandidateSet, target: float, measurer: Measurer | None
) -> SelectionOutcome:
    """Return the candidate whose measured value is closest to target.

    Ties break toward higher log-prob, then lexicographic text. Pass
    measurer=None to reuse measurements already attached to the candidates.
    """
    if not candidates.candidates:
        raise DomainError("empty candidate set")
    measured: list[tuple[Candidate, Measurement]] = []
    for cand in candidates.candidates:
        try:
            m = _measured_value(cand, measurer)
        except Exception as exc:
            raise PipelineError("select_nearest", f"measuring {cand.text!r}: {exc}") from exc
        if m.kind is not Kind.CONTINUOUS:
            raise DomainError("select_nearest requires a continuous measurer")
        measured.append((replace(cand, measurement=m), m))
    best, best_m = min(
        measured, key=lambda pair: (abs(pair[1].value - target), -_logp_rank(pair[0]), pair[0].text)
    )
    target_record = AggregateTarget(kind=AggregateKind.FRACTION_POSITIVE, value=target)
    notes = []
    if any(c.log_prob is None for c in candidates.candidates):
        notes.append("candidates lack log_probs; ties rank by arrival order")
    return SelectionOutcome(
        status="selected",
        candidate=best,
        target=target_record,
        provenance=Provenance(candidate_measures=tuple(m for _, m in measured), notes=tuple(notes)),
    )


def select_agree_or_abstain(
    candidates: CandidateSet, target_label: Label, measurer: Measurer | None
) -> SelectionOutcome:
    """Return the highest-probability candidate whose label agrees, else abstain."""
    if not candidates.candidates:
        raise DomainError("empty candidate set")
    measured: list[tuple[int, Candidate, Measurement]] = []
    for i, cand in enumerate(candidates.candidates):
        try:
            m = _measured_value(cand, measurer)
        except Exception as exc:
            raise PipelineError("select_agree_or_abstain", f"measuring {cand.text!r}: {exc}") from exc
        if m.kind is not Kind.BINARY:
            raise DomainError("select_agree_or_abstain requires a binary measurer")
        measured.append((i, replace(cand, measurement=m), m))

    target_record = AggregateTarget(
        kind=AggregateKind.MAJORITY_VOTE,
        value=1.0 if target_label is Label.SIGNIFICANT else 0.0,
        label=target_label,
    )
    notes = []
    if any(c.log_prob is None for c in candidates.candidates):
        notes.append("candidates lack log_probs; ranked by arrival order")
    provenance = Provenance(
        candidate_measures=tuple(m for _, _, m in measured), notes=tuple(notes)
    )
    agreeing = [(i, cand) for i, cand, m in measured if m.label is target_label]
    if not agreeing:
        return SelectionOutcome(
            status="abstained", reason=ABSTAIN_NO_MATCH, target=target_record, provenance=provenance
        )
    best = min(agreeing, key=lambda pair: (-_logp_rank(pair[1]), pair[0]))[1]
    return SelectionOutcome(
        status="selected", candidate=best, target=target_record, provenance=provenance
    )


def estimate_target(
    instance: Instance, measurer: Measurer, policy: SelectionPolicy
) -> tuple[AggregateTarget, tuple[Measurement, ...]]:
    """Expected aggregate for an instance under the given policy.

    Approximate policies estimate from per-document measurements
    (fraction-positive for continuous tasks, majority vote for binary);
    oracle policies read the instance's gold aggregate.
    """
    doc_measures: tuple[Measurement, ...] = ()
    if policy.is_oracle:
        if policy.is_binary:
            label = gold_label(instance)
            if label is None:
                raise DomainError(f"instance {instance.id!r} has no gold label for oracle selection")
            value = 1.0 if label is Label.SIGNIFICANT else 0.0
            return AggregateTarget(AggregateKind.MAJORITY_VOTE, value, label=label), doc_measures
        if policy.oracle_source == "reference_measure":
            value = measurer.measure_text(instance.reference_summary).value
        elif instance.gold_aggregate is not None:
            value = instance.gold_aggregate
        else:
            raise DomainError(f"instance {instance.id!r} has no gold aggregate for oracle selection")
        return AggregateTarget(AggregateKind.FRACTION_POSITIVE, value), doc_measures

    doc_measures = tuple(measurer.measure_batch([d.text for d in instance.documents]))
    if policy.is_binary:
        labels = [m.label for m in doc_measures]
        label = majority_vote(labels)
        value = sum(1 for lab in labels if lab is Label.SIGNIFICANT) / len(labels)
        return AggregateTarget(AggregateKind.MAJORITY_VOTE, value, label=label), doc_measures
    value = fraction_positive(doc_measures, policy.threshold)
    return AggregateTarget(AggregateKind.FRACTION_POSITIVE, value), doc_measures


def gold_label(instance: Instance) -> Label | None:
    """Resolved gold binary label: explicit label, else p < 0.05."""
    if instance.gold_label is not None:
        return Label(instance.gold_label)
    if instance.p_value is not None:
        return Label.SIGNIFICANT if instance.p_value < 0.05 else Label.NOT_SIGNIFICANT
    return None


def cautious_summarize(
    instance: Instance,
    generator: Generator,
    measurer: Measurer,
    policy: SelectionPolicy,
    separator: str = "<doc>",
    max_input_tokens: int | None = None,
) -> SelectionOutcome:
    """Estimate the expected aggregate, decode candidates, select or abstain.

    All intermediate artifacts (per-document measures, the target, the
    per-candidate measures) are retained in the outcome's provenance.
    """
    try:
        target, doc_measures = estimate_target(instance, measurer, policy)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError("estimate_target", str(exc), instance_id=instance.id) from exc

    linearized = linearize(instance, separator, max_input_tokens)
    try:
        candidates = generator(linearized.text)
    except Exception as exc:
        raise PipelineError("decode", str(exc), instance_id=instance.id) from exc
    if not candidates.candidates:
        raise PipelineError("decode", "empty candidate set", instance_id=instance.id)

    try:
        if policy.is_binary:
            outcome = select_agree_or_abstain(candidates, target.label, measurer)
        else:
            outcome = select_nearest(candidates, target.value, measurer)
            if (
                policy.max_distance is not None
                and not outcome.abstained
                and abs(outcome.candidate.measurement.value - target.value) > policy.max_distance
            ):
                outcome = SelectionOutcome(
                    status="abstained",
                    reason=f"nearest candidate farther than {policy.max_distance} from target",
                    target=outcome.target,
                    provenance=outcome.provenance,
                )
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError("select", str(exc), instance_id=instance.id) from exc

    notes = outcome.provenance.notes if outcome.provenance else ()
    notes += tuple(linearized.events)
    provenance = Provenance(
        document_measures=doc_measures,
        candidate_measures=outcome.provenance.candidate_measures if outcome.provenance else (),
        notes=notes,
    )
    return SelectionOutcome(
        status=outcome.status,
        candidate=outcome.candidate,
        reason=outcome.reason,
        target=target,
        provenance=provenance,
    )
