import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecgvit.errors import MetricsError
from ecgvit.metrics import compute_metrics, confusion_matrix


def brute_force(preds, labels, k):
    """Loop-based confusion matrix and one-vs-rest ratios."""
    cm = [[0] * k for _ in range(k)]
    for p, y in zip(preds, labels):
        cm[y][p] += 1
    prec, rec, f1 = [], [], []
    for c in range(k):
        tp = cm[c][c]
        fp = sum(cm[r][c] for r in range(k)) - tp
        fn = sum(cm[c]) - tp
        pr = tp / (tp + fp) if tp + fp else 0.0
        rc = tp / (tp + fn) if tp + fn else 0.0
        prec.append(pr)
        rec.append(rc)
        f1.append(2 * pr * rc / (pr + rc) if pr + rc else 0.0)
    acc = sum(cm[c][c] for c in range(k)) / len(preds)
    return cm, prec, rec, f1, acc


def test_perfect():
    m = compute_metrics([0, 1, 2, 1], [0, 1, 2, 1], 3)
    assert (m.accuracy, m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0, 1.0)


def test_binary_counts():
    # class 1 positive: TP=3, TN=3, FP=2, FN=2
    labels = [1, 1, 1, 0, 0, 0, 0, 0, 1, 1]
    preds = [1, 1, 1, 0, 0, 0, 1, 1, 0, 0]
    m = compute_metrics(preds, labels, 2)
    assert m.accuracy == pytest.approx(0.6)
    assert m.per_class_precision[1] == pytest.approx(0.6)
    assert m.per_class_recall[1] == pytest.approx(0.6)
    assert m.per_class_f1[1] == pytest.approx(0.6)
    assert (m.extra["tp"][1], m.extra["tn"][1], m.extra["fp"][1], m.extra["fn"][1]) == (3, 3, 2, 2)


def test_never_predicted_class():
    preds, labels = [0, 0, 1, 1, 0], [0, 2, 1, 2, 0]
    m = compute_metrics(preds, labels, 3)
    assert m.per_class_precision[2] == 0.0 and m.per_class_recall[2] == 0.0
    _, prec, rec, f1, _ = brute_force(preds, labels, 3)
    assert m.precision == pytest.approx(np.mean(prec), abs=1e-12)
    assert m.f1 == pytest.approx(np.mean(f1), abs=1e-12)


def test_confusion_orientation():
    assert confusion_matrix([1], [0], 2).tolist() == [[0, 1], [0, 0]]


def test_weighted():
    m = compute_metrics([0, 0, 0, 1], [0, 0, 1, 1], 2, averaging="weighted")
    w = np.array([2, 2]) / 4
    assert m.recall == pytest.approx(float(w @ m.per_class_recall))


@pytest.mark.parametrize("bad", [([], []), ([0, 1], [0]), ([3], [0])])
def test_errors(bad):
    with pytest.raises(MetricsError):
        compute_metrics(bad[0], bad[1], 3)


def test_unknown_averaging():
    with pytest.raises(MetricsError):
        compute_metrics([0], [0], 2, averaging="micro")


def test_oracle_1000_draws():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        k = int(rng.integers(2, 6))
        n = int(rng.integers(1, 60))
        preds, labels = rng.integers(0, k, n).tolist(), rng.integers(0, k, n).tolist()
        m = compute_metrics(preds, labels, k)
        cm, prec, rec, f1, acc = brute_force(preds, labels, k)
        assert m.confusion.tolist() == cm
        assert np.max(np.abs(m.per_class_precision - prec)) <= 1e-12
        assert np.max(np.abs(m.per_class_recall - rec)) <= 1e-12
        assert np.max(np.abs(m.per_class_f1 - f1)) <= 1e-12
        assert abs(m.accuracy - acc) <= 1e-12
        assert m.confusion.sum(axis=1).tolist() == [labels.count(c) for c in range(k)]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=80))
def test_binary_f1_identity(pairs):
    preds, labels = zip(*pairs)
    m = compute_metrics(list(preds), list(labels), 2)
    tp, fp, fn = (int(m.extra[key][1]) for key in ("tp", "fp", "fn"))
    direct = 2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 0.0
    assert abs(m.per_class_f1[1] - direct) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 5).flatmap(lambda k: st.tuples(st.just(k), st.lists(st.tuples(st.integers(0, k - 1), st.integers(0, k - 1)), min_size=1, max_size=50))))
def test_micro_recall_is_accuracy(case):
    k, pairs = case
    preds, labels = zip(*pairs)
    m = compute_metrics(list(preds), list(labels), k)
    assert m.micro_recall() == m.accuracy
    assert np.trace(m.confusion) / m.confusion.sum() == m.accuracy
