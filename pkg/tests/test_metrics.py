import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from imbcal.errors import ParameterError
from imbcal.metrics import (
    ECE_BINS_DEFAULT,
    average_incremental_accuracy,
    ece,
    ece_from_table,
    group_mean_scores,
    reliability_table,
    top1,
)


def binary_probs(confidences):
    """Two-column rows where column 0 holds the confidence, so pred = 0."""
    c = np.asarray(confidences, dtype=np.float64)
    return np.stack([c, 1.0 - c], axis=1)


class TestTop1:
    def test_all_correct(self):
        assert top1([0, 1, 2], [0, 1, 2]) == 100.0

    def test_three_of_four(self):
        assert top1([0, 1, 2, 2], [0, 1, 2, 3]) == 75.0

    def test_empty_rejected(self):
        with pytest.raises(ParameterError):
            top1([], [])


class TestAverageIncremental:
    def test_drops_first_state(self):
        assert average_incremental_accuracy([70.0, 50.0, 30.0]) == pytest.approx(40.0)

    def test_two_states(self):
        assert average_incremental_accuracy([90.0, 60.0]) == 60.0

    def test_single_state_rejected(self):
        with pytest.raises(ParameterError):
            average_incremental_accuracy([80.0])


class TestEce:
    def test_perfect_confident_classifier_is_zero(self):
        p = binary_probs([1.0] * 8)
        assert ece(p, np.zeros(8, dtype=int), np.zeros(8, dtype=int)) == pytest.approx(0.0, abs=1e-12)

    def test_hand_case_point_three(self):
        # ten samples at confidence 0.9, six correct: |0.9 - 0.6| = 0.3
        p = binary_probs([0.9] * 10)
        preds = np.zeros(10, dtype=int)
        labels = np.array([0] * 6 + [1] * 4)
        assert ece(p, preds, labels) == pytest.approx(0.3, abs=1e-12)

    def test_confidence_on_left_closed_edge(self):
        # conf 0.07 with M=20 lands in [0.05, 0.10)
        p = np.array([[0.07] + [0.93 / 15] * 15])
        table = reliability_table(p, [0], [0], m=20)
        occupied = [b for b in table if b.count]
        assert len(occupied) == 1
        assert (occupied[0].lo, occupied[0].hi) == (0.05, 0.10)

    def test_confidence_one_in_last_bin(self):
        p = binary_probs([1.0])
        table = reliability_table(p, [0], [0])
        assert table[-1].count == 1

    def test_default_bin_count(self):
        assert ECE_BINS_DEFAULT == 20
        p = binary_probs([0.6, 0.8, 1.0])
        preds = labels = np.zeros(3, dtype=int)
        assert ece(p, preds, labels) == ece(p, preds, labels, m=20)

    def test_table_recomposition(self):
        rng = np.random.default_rng(0)
        raw = rng.random((50, 5))
        p = raw / raw.sum(axis=1, keepdims=True)
        preds = p.argmax(axis=1)
        labels = rng.integers(0, 5, size=50)
        table = reliability_table(p, preds, labels)
        assert ece_from_table(table, 50) == pytest.approx(ece(p, preds, labels), abs=1e-12)

    def test_rows_must_sum_to_one(self):
        with pytest.raises(ParameterError):
            ece(np.array([[0.5, 0.4]]), [0], [0])

    def test_misaligned_lengths(self):
        with pytest.raises(ParameterError):
            ece(binary_probs([0.9, 0.8]), [0], [0, 0])

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (20,), elements=st.floats(0.5, 1.0)),
           st.integers(min_value=0, max_value=2**16))
    def test_bounded_in_unit_interval(self, confs, seed):
        p = binary_probs(confs)
        labels = np.random.default_rng(seed).integers(0, 2, size=20)
        e = ece(p, np.zeros(20, dtype=int), labels)
        assert 0.0 <= e <= 1.0

    def test_merging_two_runs_with_shared_bins(self):
        # samples all land in one bin, so ECE is |mean conf - accuracy|
        p = binary_probs([0.82, 0.84, 0.81, 0.83])
        labels = np.array([0, 0, 1, 0])
        expected = abs(np.mean([0.82, 0.84, 0.81, 0.83]) - 0.75)
        assert ece(p, np.zeros(4, dtype=int), labels) == pytest.approx(expected, abs=1e-12)


class TestGroupMeanScores:
    def test_split_means(self):
        s = np.array([[3.0, 0.0], [1.0, 0.0], [0.0, 5.0]])
        labels = [0, 0, 1]
        mu_old, mu_new = group_mean_scores(s, labels, old_classes=[0], new_classes=[1])
        assert mu_old == pytest.approx(2.0)
        assert mu_new == pytest.approx(5.0)

    def test_no_old_classes_gives_none(self):
        s = np.array([[2.0, 0.0], [0.0, 4.0]])
        mu_old, mu_new = group_mean_scores(s, [0, 1], old_classes=[], new_classes=[0, 1])
        assert mu_old is None
        assert mu_new == pytest.approx(3.0)

    def test_uses_ground_truth_column(self):
        # label picks the column even when another class scores higher
        s = np.array([[1.0, 9.0]])
        _, mu_new = group_mean_scores(s, [0], old_classes=[], new_classes=[0])
        assert mu_new == 1.0

    def test_no_new_samples_rejected(self):
        s = np.array([[1.0, 2.0]])
        with pytest.raises(ParameterError):
            group_mean_scores(s, [0], old_classes=[0], new_classes=[1])
