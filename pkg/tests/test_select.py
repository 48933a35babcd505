from __future__ import annotations

import random

import pytest

from mdsynth.corpus import Task, permute_documents
from mdsynth.decode import Candidate, CandidateSet
from mdsynth.errors import DomainError, PipelineError
from mdsynth.measure import Label, LexiconMeasurer, Measurement
from mdsynth.select import (
    ABSTAIN_NO_MATCH,
    PolicyKind,
    SelectionOutcome,
    SelectionPolicy,
    cautious_summarize,
    estimate_target,
    gold_label,
    select_agree_or_abstain,
    select_nearest,
)

from .conftest import make_instance

SIG = Label.SIGNIFICANT
NOT = Label.NOT_SIGNIFICANT


def cands(*pairs, measurements=None):
    out = []
    for i, (text, logp) in enumerate(pairs):
        m = None
        if measurements is not None:
            m = measurements[i]
        out.append(Candidate(text=text, log_prob=logp, measurement=m))
    return CandidateSet(candidates=tuple(out))


class MappingMeasurer:
    """Measurer backed by an explicit text -> Measurement table."""

    def __init__(self, table):
        self.table = table

    def measure_text(self, text):
        return self.table[text]

    def measure_batch(self, texts):
        return [self.measure_text(t) for t in texts]


class TestSelectNearest:
    def test_reference_five_candidate_case(self):
        # Five diverse candidates with measured sentiments 0.243, 0.429,
        # 0.288, 0.434, 0.406 against a target of 0.37: the 0.406 candidate
        # is the unique nearest. Exact, no tolerance.
        sentiments = [0.243, 0.429, 0.288, 0.434, 0.406]
        candidate_set = cands(
            *[(f"candidate {i}", -float(i)) for i in range(5)],
            measurements=[Measurement.continuous(v) for v in sentiments],
        )
        outcome = select_nearest(candidate_set, 0.37, measurer=None)
        assert outcome.status == "selected"
        assert outcome.candidate.measurement.value == 0.406
        assert outcome.candidate.text == "candidate 4"

    def test_single_candidate(self):
        cs = cands(("only", -1.0), measurements=[Measurement.continuous(0.9)])
        assert select_nearest(cs, 0.0, None).candidate.text == "only"

    def test_equidistant_tie_prefers_higher_logprob(self):
        # 0.25 and 0.75 are exactly representable, so both distances from
        # 0.5 are exactly equal and the tie rule decides.
        cs = cands(
            ("low", -1.0),
            ("high", -2.0),
            measurements=[Measurement.continuous(0.25), Measurement.continuous(0.75)],
        )
        assert select_nearest(cs, 0.5, None).candidate.text == "low"

    def test_full_tie_falls_back_to_lexicographic_text(self):
        cs = cands(
            ("zeta", -1.0),
            ("alpha", -1.0),
            measurements=[Measurement.continuous(0.25), Measurement.continuous(0.75)],
        )
        assert select_nearest(cs, 0.5, None).candidate.text == "alpha"

    def test_measures_with_supplied_measurer(self):
        cs = cands(("good great film", -1.0), ("bad awful film", -2.0))
        outcome = select_nearest(cs, 1.0, LexiconMeasurer())
        assert outcome.candidate.text == "good great film"
        assert len(outcome.provenance.candidate_measures) == 2

    def test_empty_candidate_set_rejected(self):
        with pytest.raises(DomainError, match="empty candidate set"):
            select_nearest(CandidateSet(candidates=()), 0.5, None)

    def test_binary_measurement_rejected(self):
        cs = cands(("x", -1.0), measurements=[Measurement.binary(SIG)])
        with pytest.raises(DomainError, match="continuous"):
            select_nearest(cs, 0.5, None)

    def test_measurement_failure_names_candidate(self):
        class Failing:
            def measure_text(self, text):
                raise RuntimeError("backend down")

            def measure_batch(self, texts):
                return [self.measure_text(t) for t in texts]

        cs = cands(("the one", -1.0))
        with pytest.raises(PipelineError, match="the one"):
            select_nearest(cs, 0.5, Failing())

    def test_order_invariance(self):
        values = [0.1, 0.8, 0.45, 0.62, 0.3]
        pairs = [(f"c{i}", -float(i)) for i in range(5)]
        ms = [Measurement.continuous(v) for v in values]
        base = select_nearest(cands(*pairs, measurements=ms), 0.5, None)
        rng = random.Random(4)
        order = list(range(5))
        for _ in range(10):
            rng.shuffle(order)
            shuffled = cands(
                *[pairs[i] for i in order], measurements=[ms[i] for i in order]
            )
            assert select_nearest(shuffled, 0.5, None).candidate.text == base.candidate.text

    def test_nearest_is_global_minimum(self):
        rng = random.Random(9)
        for _ in range(30):
            n = rng.randint(1, 8)
            values = [round(rng.random(), 3) for _ in range(n)]
            target = rng.random()
            cs = cands(
                *[(f"c{i}", -float(i)) for i in range(n)],
                measurements=[Measurement.continuous(v) for v in values],
            )
            chosen = select_nearest(cs, target, None).candidate
            assert all(
                abs(chosen.measurement.value - target) <= abs(v - target) + 1e-12
                for v in values
            )


class TestSelectAgreeOrAbstain:
    def test_single_agreeing_candidate_selected(self):
        labels = [NOT, NOT, SIG, NOT, NOT]
        cs = cands(
            *[(f"c{i}", -float(i)) for i in range(5)],
            measurements=[Measurement.binary(lab) for lab in labels],
        )
        outcome = select_agree_or_abstain(cs, SIG, None)
        assert outcome.status == "selected"
        assert outcome.candidate.text == "c2"

    def test_no_agreement_abstains(self):
        cs = cands(
            ("a", -1.0), ("b", -2.0),
            measurements=[Measurement.binary(NOT), Measurement.binary(NOT)],
        )
        outcome = select_agree_or_abstain(cs, SIG, None)
        assert outcome.abstained
        assert outcome.reason == ABSTAIN_NO_MATCH
        assert outcome.candidate is None

    def test_all_agree_takes_highest_logprob(self):
        cs = cands(
            ("low", -5.0), ("high", -0.5), ("mid", -2.0),
            measurements=[Measurement.binary(SIG)] * 3,
        )
        assert select_agree_or_abstain(cs, SIG, None).candidate.text == "high"

    def test_missing_logprobs_rank_by_arrival(self):
        cs = cands(
            ("first", None), ("second", None),
            measurements=[Measurement.binary(SIG)] * 2,
        )
        outcome = select_agree_or_abstain(cs, SIG, None)
        assert outcome.candidate.text == "first"
        assert any("arrival order" in n for n in outcome.provenance.notes)

    def test_never_returns_disagreeing_candidate(self):
        rng = random.Random(5)
        for _ in range(50):
            n = rng.randint(1, 6)
            labels = [rng.choice((SIG, NOT)) for _ in range(n)]
            target = rng.choice((SIG, NOT))
            cs = cands(
                *[(f"c{i}", -rng.random()) for i in range(n)],
                measurements=[Measurement.binary(lab) for lab in labels],
            )
            outcome = select_agree_or_abstain(cs, target, None)
            if outcome.abstained:
                assert target not in labels
            else:
                assert outcome.candidate.measurement.label is target


class TestOutcomeInvariants:
    def test_selected_requires_candidate(self):
        from mdsynth.aggregate import AggregateKind, AggregateTarget

        target = AggregateTarget(AggregateKind.MEAN, 0.5)
        with pytest.raises(DomainError):
            SelectionOutcome(status="selected", target=target)
        with pytest.raises(DomainError):
            SelectionOutcome(status="abstained", target=target)


class TestEstimateTarget:
    def test_continuous_fraction_positive(self):
        inst = make_instance("i", ["good great film", "bad awful film", "great fresh film"])
        policy = SelectionPolicy(kind=PolicyKind.NEAREST_CONTINUOUS)
        target, doc_measures = estimate_target(inst, LexiconMeasurer(), policy)
        assert target.value == pytest.approx(2 / 3)
        assert len(doc_measures) == 3

    def test_oracle_uses_gold_aggregate(self):
        inst = make_instance("i", ["anything here"], gold_aggregate=0.37)
        policy = SelectionPolicy(kind=PolicyKind.ORACLE_NEAREST)
        target, _ = estimate_target(inst, LexiconMeasurer(), policy)
        assert target.value == 0.37

    def test_oracle_reference_measure_source(self):
        inst = make_instance(
            "i", ["anything here"], reference="a wonderful film", gold_aggregate=0.0
        )
        policy = SelectionPolicy(kind=PolicyKind.ORACLE_NEAREST, oracle_source="reference_measure")
        target, _ = estimate_target(inst, LexiconMeasurer(), policy)
        assert target.value == pytest.approx(0.75)

    def test_gold_label_resolution(self):
        sig = make_instance("i", ["x"], task=Task.BINARY, p_value=0.01)
        not_sig = make_instance("j", ["x"], task=Task.BINARY, p_value=0.5)
        explicit = make_instance("k", ["x"], task=Task.BINARY, gold_label="significant")
        assert gold_label(sig) is SIG
        assert gold_label(not_sig) is NOT
        assert gold_label(explicit) is SIG


class TestCautiousSummarize:
    def _order_invariant_generator(self):
        def generate(conditioning):
            tokens = sorted(set(conditioning.split()) - {"<doc>"})
            return CandidateSet(
                candidates=(Candidate(text=" ".join(tokens) or "empty", log_prob=-1.0),)
            )

        return generate

    def test_oracle_outcome_invariant_under_permutation(self):
        inst = make_instance(
            "i", ["good fresh film", "bad dull film", "a plain film"], gold_aggregate=0.6
        )
        policy = SelectionPolicy(kind=PolicyKind.ORACLE_NEAREST)
        gen = self._order_invariant_generator()
        base = cautious_summarize(inst, gen, LexiconMeasurer(), policy)
        for seed in range(8):
            permuted = permute_documents(inst, seed)
            again = cautious_summarize(permuted, gen, LexiconMeasurer(), policy)
            assert again.candidate == base.candidate
            assert again.target == base.target

    def test_all_positive_docs_pick_positive_candidate(self):
        # Generator returns one positive and one negative canned candidate;
        # the lexicon measures 0.8333 and 0.1667, the all-positive inputs
        # give target 1.0, so the positive candidate wins.
        inst = make_instance("i", ["good great film", "a wonderful film"])

        def generate(conditioning):
            return CandidateSet(
                candidates=(
                    Candidate(text="a wonderful excellent film", log_prob=-1.0),
                    Candidate(text="a bad awful film", log_prob=-0.5),
                )
            )

        policy = SelectionPolicy(kind=PolicyKind.NEAREST_CONTINUOUS)
        outcome = cautious_summarize(inst, generate, LexiconMeasurer(), policy)
        assert outcome.target.value == 1.0
        assert outcome.candidate.text == "a wonderful excellent film"
        assert outcome.candidate.measurement.value == pytest.approx(5 / 6)
        assert len(outcome.provenance.document_measures) == 2

    def test_empty_candidate_set_is_error_not_abstention(self):
        inst = make_instance("i", ["a film"])
        policy = SelectionPolicy(kind=PolicyKind.NEAREST_CONTINUOUS)

        def generate(conditioning):
            return CandidateSet(candidates=())

        with pytest.raises(PipelineError, match="empty candidate set"):
            cautious_summarize(inst, generate, LexiconMeasurer(), policy)

    def test_binary_pipeline_with_majority_vote(self):
        inst = make_instance(
            "i",
            [
                "treatment significantly improved recovery",
                "outcomes significantly reduced mortality",
                "no significant difference in pain",
            ],
            task=Task.BINARY,
        )
        from mdsynth.measure import KeywordMeasurer

        def generate(conditioning):
            return CandidateSet(
                candidates=(
                    Candidate(text="no significant difference was seen", log_prob=-0.5),
                    Candidate(text="the drug significantly improved outcomes", log_prob=-1.5),
                )
            )

        policy = SelectionPolicy(kind=PolicyKind.AGREE_OR_ABSTAIN)
        outcome = cautious_summarize(inst, generate, KeywordMeasurer(), policy)
        assert outcome.target.label is SIG
        assert outcome.candidate.text == "the drug significantly improved outcomes"

    def test_continuous_abstention_knob(self):
        inst = make_instance("i", ["good great film"])
        policy = SelectionPolicy(kind=PolicyKind.NEAREST_CONTINUOUS, max_distance=0.05)

        def generate(conditioning):
            return CandidateSet(candidates=(Candidate(text="a bad awful film", log_prob=-1.0),))

        outcome = cautious_summarize(inst, generate, LexiconMeasurer(), policy)
        assert outcome.abstained
        assert "farther than" in outcome.reason
