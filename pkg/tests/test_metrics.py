import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import matthews_corrcoef

from fedhd import metrics


def brute_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return total / (len(pos) * len(neg))


class TestAccuracy:
    def test_examples(self):
        assert metrics.accuracy([1, 0, 1], [1, 0, 1]) == 1.0
        assert metrics.accuracy([0, 1, 0, 1], [0, 1, 1, 1]) == 0.75

    def test_order_invariant(self):
        p, y = np.array([0, 1, 0, 1]), np.array([0, 1, 1, 1])
        perm = [3, 1, 0, 2]
        assert metrics.accuracy(p[perm], y[perm]) == metrics.accuracy(p, y)

    def test_empty(self):
        with pytest.raises(ValueError):
            metrics.accuracy([], [])


class TestMcc:
    def test_perfect(self):
        assert metrics.mcc([0, 1, 2, 1], [0, 1, 2, 1], 3) == pytest.approx(1.0)

    def test_constant_predictor(self):
        assert metrics.mcc([1, 1, 1, 1], [0, 1, 0, 1], 2) == 0.0

    def test_binary_hand_value(self):
        # TP=4, TN=3, FP=1, FN=2
        labels = [1] * 4 + [0] * 3 + [0] + [1] * 2
        preds = [1] * 4 + [0] * 3 + [1] + [0] * 2
        expected = (4 * 3 - 1 * 2) / np.sqrt(5 * 6 * 5 * 4)
        assert metrics.mcc(preds, labels, 2) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.40825, abs=1e-5)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            metrics.mcc([0, 3], [0, 1], 2)

    @pytest.mark.filterwarnings("ignore::UserWarning")
    @settings(max_examples=100)
    @given(st.integers(2, 5), st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)),
                                       min_size=2, max_size=60))
    def test_matches_reference(self, k, pairs):
        preds = np.array([p % k for p, _ in pairs])
        labels = np.array([y % k for _, y in pairs])
        ref = matthews_corrcoef(labels, preds)
        assert metrics.mcc(preds, labels, k) == pytest.approx(ref, abs=1e-12)

    @settings(max_examples=50)
    @given(st.permutations(range(4)), st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)),
                                               min_size=2, max_size=40))
    def test_label_permutation_equivariance(self, perm, pairs):
        perm = np.array(perm)
        preds = np.array([p for p, _ in pairs])
        labels = np.array([y for _, y in pairs])
        assert metrics.mcc(perm[preds], perm[labels], 4) == pytest.approx(
            metrics.mcc(preds, labels, 4), abs=1e-12)


class TestAuc:
    def test_hand_example(self):
        scores, labels = [0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]
        assert brute_auc(scores, labels) == 0.75
        assert metrics.auc(scores, labels) == 0.75

    def test_separated_and_tied(self):
        assert metrics.auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
        assert metrics.auc([0.5] * 6, [0, 1, 0, 1, 1, 0]) == 0.5

    def test_single_class(self):
        with pytest.raises(ValueError, match="AUC undefined"):
            metrics.auc([0.1, 0.2], [1, 1])

    @settings(max_examples=100)
    @given(st.lists(st.tuples(st.integers(0, 6), st.booleans()), min_size=2, max_size=40))
    def test_matches_pair_counting(self, rows):
        labels = [int(b) for _, b in rows]
        if len(set(labels)) < 2:
            return
        scores = [float(s) for s, _ in rows]
        assert metrics.auc(scores, labels) == pytest.approx(brute_auc(scores, labels), abs=1e-12)

    @settings(max_examples=50)
    @given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=4, max_size=30, unique=True))
    def test_negation_complements(self, scores):
        labels = [i % 2 for i in range(len(scores))]
        s = np.array(scores)
        assert metrics.auc(s, labels) + metrics.auc(-s, labels) == pytest.approx(1.0)


class TestWeightedAverage:
    def test_equal_supports(self):
        assert metrics.weighted_average([0.2, 0.4, 0.9], [5, 5, 5]) == pytest.approx(0.5)

    def test_cam16_sizes(self):
        value = metrics.weighted_average([0.851, 0.958], [74, 55])
        assert value == pytest.approx((74 * 0.851 + 55 * 0.958) / 129)
        assert round(value, 4) == 0.8966

    def test_single(self):
        assert metrics.weighted_average([0.7], [12]) == pytest.approx(0.7, abs=1e-15)


def test_evaluate_binary():
    probs = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.3, 0.7]])
    res = metrics.evaluate(probs, [0, 1, 1, 1], 2)
    assert res["accuracy"] == 0.75
    assert res["auc"] == pytest.approx(brute_auc(probs[:, 1], [0, 1, 1, 1]))
    assert res["support"] == 4
