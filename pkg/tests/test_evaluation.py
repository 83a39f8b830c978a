from __future__ import annotations

import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from structboard.evaluation import (
    alignment_score,
    auc_is_degenerate,
    auc_roc,
    average_precision,
    bcr_score,
    build_metric_row,
    case_types,
    confusion_counts,
    precision_recall,
)


def brute_force_auc(scores, labels):
    """Oracle: count positive-negative pairs explicitly (ties credit 0.5)."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    if not pos or not neg:
        return 0.5
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def brute_force_ap(scores, labels):
    """Oracle: recount precision/recall at every distinct threshold."""
    total_pos = sum(labels)
    thresholds = sorted(set(scores), reverse=True)
    ap = 0.0
    recall_prev = 0.0
    for t in thresholds:
        tp = sum(1 for s, y in zip(scores, labels) if s >= t and y == 1)
        fp = sum(1 for s, y in zip(scores, labels) if s >= t and y == 0)
        precision = tp / (tp + fp)
        recall = tp / total_pos
        ap += (recall - recall_prev) * precision
        recall_prev = recall
    return ap


def random_fixture(rng: random.Random, max_points: int = 50, discrete: bool = False):
    n = rng.randint(2, max_points)
    labels = [rng.randint(0, 1) for _ in range(n)]
    if discrete:
        scores = [rng.choice((0.1, 0.25, 0.5, 0.75, 0.9)) for _ in range(n)]
    else:
        scores = [rng.random() for _ in range(n)]
    return scores, labels


class TestConfusion:
    def test_hand_enumerated_fixture(self):
        decisions = [1, 1, 0, 0, 1, 0, 1, 0, 0, 1]
        labels = [1, 0, 1, 0, 1, 1, 0, 0, 1, 1]
        tp, fp, tn, fn = confusion_counts(decisions, labels)
        assert (tp, fp, tn, fn) == (3, 2, 2, 3)

    def test_all_negative_predictor_has_undefined_precision(self):
        decisions = [0] * 8
        labels = [1, 0, 1, 0, 0, 0, 1, 0]
        tp, fp, tn, fn = confusion_counts(decisions, labels)
        precision, recall = precision_recall(tp, fp, fn)
        assert precision is None
        assert recall == 0.0

    def test_perfect_predictor(self):
        labels = [1, 0, 1, 0]
        tp, fp, tn, fn = confusion_counts(labels, labels)
        precision, recall = precision_recall(tp, fp, fn)
        assert precision == 1.0
        assert recall == 1.0

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="length mismatch"):
            confusion_counts([1], [1, 0])

    def test_case_types(self):
        assert case_types([1, 1, 0, 0], [1, 0, 1, 0]) == ["TP", "FP", "FN", "TN"]


class TestAucRoc:
    def test_perfect_separation(self):
        assert auc_roc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0

    def test_all_scores_equal(self):
        assert auc_roc([0.5] * 6, [1, 0, 1, 0, 0, 1]) == 0.5

    def test_six_point_fixture_equals_pair_counting(self):
        scores = [0.9, 0.7, 0.7, 0.4, 0.3, 0.1]
        labels = [1, 0, 1, 1, 0, 0]
        assert auc_roc(scores, labels) == brute_force_auc(scores, labels)

    def test_single_class_reports_half_and_flags(self):
        assert auc_roc([0.4, 0.6], [0, 0]) == 0.5
        assert auc_is_degenerate([0.4, 0.6], [0, 0])
        assert auc_is_degenerate([0.5, 0.5], [0, 1])
        assert not auc_is_degenerate([0.4, 0.6], [0, 1])

    def test_matches_oracle_on_many_random_fixtures(self):
        rng = random.Random(1234)
        for trial in range(300):
            scores, labels = random_fixture(rng, discrete=trial % 2 == 0)
            if len(set(labels)) < 2:
                continue
            assert auc_roc(scores, labels) == brute_force_auc(scores, labels), (scores, labels)

    @given(st.integers(0, 100_000))
    @settings(max_examples=50, deadline=None)
    def test_invariant_under_monotone_transform(self, seed):
        rng = random.Random(seed)
        scores, labels = random_fixture(rng)
        if len(set(labels)) < 2:
            return
        transformed = [2.0 * s + 1.0 for s in scores]
        assert auc_roc(scores, labels) == pytest.approx(auc_roc(transformed, labels), abs=1e-12)


class TestAveragePrecision:
    def test_single_positive_ranked_first(self):
        assert average_precision([0.9, 0.5, 0.4, 0.1], [1, 0, 0, 0]) == 1.0

    def test_all_positive_labels(self):
        assert average_precision([0.9, 0.1, 0.5], [1, 1, 1]) == 1.0

    def test_eight_point_fixture_equals_threshold_enumeration(self):
        scores = [0.9, 0.8, 0.8, 0.6, 0.5, 0.5, 0.2, 0.1]
        labels = [1, 0, 1, 0, 1, 0, 0, 1]
        assert average_precision(scores, labels) == brute_force_ap(scores, labels)

    def test_no_positive_labels_rejected(self):
        with pytest.raises(ValueError, match="at least one positive"):
            average_precision([0.5, 0.4], [0, 0])

    def test_matches_oracle_on_many_random_fixtures(self):
        rng = random.Random(99)
        for trial in range(300):
            scores, labels = random_fixture(rng, discrete=trial % 2 == 0)
            if sum(labels) == 0:
                continue
            assert average_precision(scores, labels) == brute_force_ap(scores, labels), (scores, labels)

    @given(st.integers(0, 100_000))
    @settings(max_examples=50, deadline=None)
    def test_invariant_under_monotone_transform(self, seed):
        rng = random.Random(seed)
        scores, labels = random_fixture(rng)
        if sum(labels) == 0:
            return
        transformed = [s**3 + 2.0 for s in scores]
        assert average_precision(scores, labels) == pytest.approx(
            average_precision(transformed, labels), abs=1e-12
        )

    def test_degenerate_all_negative_predictor_row(self):
        # constant scores at the prevalence, no positive decisions: the row
        # reads precision nan, recall 0.00, AUC 0.50 with the degeneracy flag
        labels = [1, 0, 0, 0, 1, 0, 0, 0]
        scores = [0.131] * 8
        decisions = [0] * 8
        row = build_metric_row("baseline agent", 0, scores, decisions, labels)
        assert row.precision is None
        assert row.recall == 0.0
        assert row.auc == 0.5
        assert row.auc_degenerate
        assert row.ap == pytest.approx(0.25)  # prevalence of the fixture


class TestAlignmentScore:
    def test_identical_texts(self):
        s = alignment_score("low eGFR indicates risk", "low eGFR indicates risk")
        assert (s.precision, s.recall, s.f1) == (1.0, 1.0, 1.0)

    def test_disjoint_texts(self):
        s = alignment_score("alpha beta", "gamma delta")
        assert s.f1 == 0.0

    def test_half_overlap(self):
        s = alignment_score("a b", "a c")
        assert s.precision == pytest.approx(0.5)
        assert s.recall == pytest.approx(0.5)
        assert s.f1 == pytest.approx(0.5)

    def test_empty_side_scores_zero(self):
        assert alignment_score("", "words here").f1 == 0.0
        assert alignment_score("words here", "").f1 == 0.0

    def test_case_insensitive_tokens(self):
        assert alignment_score("Low eGFR", "low egfr").f1 == 1.0

    def test_symmetry_of_f1_under_default_embedding(self):
        a = "the patient has egfr in bin 1"
        b = "egfr bin 2 and hemoglobin bin 1"
        assert alignment_score(a, b).f1 == pytest.approx(alignment_score(b, a).f1)

    def test_custom_embedding_changes_matching(self):
        # an embedding that maps every token to the same vector makes any
        # two non-empty texts align perfectly
        def embed(token: str) -> np.ndarray:
            return np.array([1.0, 0.0])

        s = alignment_score("alpha beta", "gamma", embed=embed)
        assert s.f1 == pytest.approx(1.0)

    def test_scores_bounded(self):
        rng = random.Random(7)
        vocab = ["aki", "egfr", "bin", "risk", "low", "high", "the", "patient"]
        for _ in range(50):
            cand = " ".join(rng.choices(vocab, k=rng.randint(1, 10)))
            ref = " ".join(rng.choices(vocab, k=rng.randint(1, 10)))
            s = alignment_score(cand, ref)
            assert 0.0 <= s.precision <= 1.0
            assert 0.0 <= s.recall <= 1.0
            assert 0.0 <= s.f1 <= 1.0


class TestBcrScore:
    def test_reference_table_values(self):
        table = [
            (0.161, 0.846, 0.5035),
            (0.195, 0.878, 0.5365),
            (0.161, 0.864, 0.5125),
            (0.195, 0.919, 0.5570),
            (0.184, 0.853, 0.5185),
            (0.194, 0.858, 0.5260),
            (0.148, 0.841, 0.4945),
            (0.180, 0.843, 0.5115),
        ]
        for a, b, expected in table:
            assert round(bcr_score(a, 0.5, b, 0.5), 4) == expected

    def test_degenerate_weights(self):
        assert bcr_score(0.42, 1.0, 0.9, 0.0) == pytest.approx(0.42)

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError, match="sum to 1"):
            bcr_score(0.5, 0.6, 0.5, 0.6)

    def test_metric_range_checked(self):
        with pytest.raises(ValueError, match="in \\[0, 1\\]"):
            bcr_score(1.4, 0.5, 0.5, 0.5)

    @given(
        a=st.floats(0, 1), b=st.floats(0, 1), alpha=st.floats(0, 1)
    )
    @settings(max_examples=50)
    def test_linear_and_bounded(self, a, b, alpha):
        value = bcr_score(a, alpha, b, 1.0 - alpha)
        assert 0.0 <= value <= 1.0
        assert value == pytest.approx(a * alpha + b * (1.0 - alpha))
