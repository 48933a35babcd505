from __future__ import annotations

import pytest
from hypothesis import given, strategies as st
from scipy import stats

from mdsynth.aggregate import (
    AggregateKind,
    AggregateTarget,
    fixed_effects_meta_analysis,
    fraction_positive,
    majority_vote,
    normal_two_sided_p,
    weighted_mean,
)
from mdsynth.errors import DomainError
from mdsynth.measure import Label, Measurement

SIG = Label.SIGNIFICANT
NOT = Label.NOT_SIGNIFICANT


class TestWeightedMean:
    def test_uniform_weights_is_arithmetic_mean(self):
        assert weighted_mean([0.2, 0.4, 0.6], [1, 1, 1]) == pytest.approx(0.4)

    def test_weighted(self):
        # (3*0 + 1*1) / 4
        assert weighted_mean([0.0, 1.0], [3, 1]) == pytest.approx(0.25)

    def test_single_element(self):
        assert weighted_mean([0.7], [5]) == pytest.approx(0.7)

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            weighted_mean([], [])

    def test_all_zero_weights_rejected(self):
        with pytest.raises(DomainError):
            weighted_mean([0.1, 0.2], [0, 0])

    @given(
        st.lists(st.floats(0, 1), min_size=1, max_size=8),
        st.floats(0.01, 100),
    )
    def test_invariant_under_weight_scaling(self, values, scale):
        weights = [1.0 + i for i in range(len(values))]
        a = weighted_mean(values, weights)
        b = weighted_mean(values, [w * scale for w in weights])
        assert a == pytest.approx(b, abs=1e-12)

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=8))
    def test_within_min_max(self, values):
        weights = [i + 0.5 for i in range(len(values))]
        m = weighted_mean(values, weights)
        assert min(values) - 1e-12 <= m <= max(values) + 1e-12


class TestFractionPositive:
    def test_direct_count(self):
        assert fraction_positive([0.8, 0.9, 0.2], 0.5) == pytest.approx(2 / 3)

    def test_all_positive(self):
        assert fraction_positive([0.9, 0.9, 0.9], 0.5) == 1.0

    def test_tie_up_rule(self):
        assert fraction_positive([0.5], 0.5) == 1.0

    def test_accepts_measurements(self):
        ms = [Measurement.continuous(v) for v in (0.8, 0.2)]
        assert fraction_positive(ms, 0.5) == 0.5

    def test_accepts_binary_measurements(self):
        ms = [Measurement.binary(SIG), Measurement.binary(NOT)]
        assert fraction_positive(ms, 0.5) == 0.5

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            fraction_positive([], 0.5)

    @given(st.lists(st.floats(0, 1), min_size=2, max_size=10), st.randoms())
    def test_permutation_invariant(self, values, rng):
        shuffled = values[:]
        rng.shuffle(shuffled)
        assert fraction_positive(values, 0.5) == fraction_positive(shuffled, 0.5)


class TestMajorityVote:
    def test_majority(self):
        assert majority_vote([SIG, SIG, NOT]) is SIG

    def test_tie_is_not_significant(self):
        assert majority_vote([SIG, NOT]) is NOT

    def test_single(self):
        assert majority_vote([NOT]) is NOT

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            majority_vote([])


class TestMetaAnalysis:
    def test_two_study_example(self):
        # Hand computation with w = [10, 5]; p checked against an
        # independent normal CDF before freezing.
        r = fixed_effects_meta_analysis([(0.5, 0.1), (0.3, 0.2)])
        assert r.pooled_effect == pytest.approx(0.4333, abs=1e-4)
        assert r.standard_error == pytest.approx(0.2582, abs=1e-4)
        assert r.z_score == pytest.approx(1.678, abs=1e-3)
        assert r.p_value == pytest.approx(0.0933, abs=1e-4)
        assert not r.significant

    def test_single_study_example(self):
        r = fixed_effects_meta_analysis([(1.0, 0.25)])
        assert r.pooled_effect == 1.0
        assert r.standard_error == pytest.approx(0.5)
        assert r.z_score == pytest.approx(2.0)
        assert r.p_value == pytest.approx(0.0455, abs=1e-4)
        assert r.significant

    def test_all_zero_effects(self):
        r = fixed_effects_meta_analysis([(0.0, 0.1), (0.0, 0.3)])
        assert r.pooled_effect == 0.0
        assert r.p_value == 1.0
        assert not r.significant

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            fixed_effects_meta_analysis([])

    def test_non_positive_variance_rejected(self):
        with pytest.raises(DomainError):
            fixed_effects_meta_analysis([(0.5, 0.0)])

    @given(
        st.lists(
            st.tuples(st.floats(-2, 2), st.floats(0.01, 2)), min_size=1, max_size=6
        ),
        st.integers(0, 5),
    )
    def test_duplicating_a_study_halves_its_variance(self, studies, index):
        dup = studies[index % len(studies)]
        doubled = studies + [dup]
        halved = studies[:]
        halved[index % len(studies)] = (dup[0], dup[1] / 2)
        a = fixed_effects_meta_analysis(doubled)
        b = fixed_effects_meta_analysis(halved)
        assert a.pooled_effect == pytest.approx(b.pooled_effect, abs=1e-12)
        assert a.standard_error == pytest.approx(b.standard_error, abs=1e-12)

    @given(
        st.lists(st.tuples(st.floats(-3, 3), st.floats(0.01, 2)), min_size=1, max_size=8)
    )
    def test_pooled_within_effect_range(self, studies):
        r = fixed_effects_meta_analysis(studies)
        effects = [e for e, _ in studies]
        assert min(effects) - 1e-9 <= r.pooled_effect <= max(effects) + 1e-9

    @given(st.floats(-8, 8))
    def test_p_value_matches_scipy(self, z):
        assert normal_two_sided_p(z) == pytest.approx(2 * stats.norm.sf(abs(z)), abs=1e-10)

    def test_extreme_z_keeps_p_positive(self):
        assert 0.0 < normal_two_sided_p(1000.0) <= 1.0


class TestAggregateTarget:
    def test_p_value_only_for_meta_analysis(self):
        with pytest.raises(DomainError):
            AggregateTarget(kind=AggregateKind.MEAN, value=0.5, p_value=0.1)
        with pytest.raises(DomainError):
            AggregateTarget(kind=AggregateKind.META_ANALYSIS, value=0.5)

    def test_fraction_range_checked(self):
        with pytest.raises(DomainError):
            AggregateTarget(kind=AggregateKind.FRACTION_POSITIVE, value=1.4)
