import numpy as np
import pytest
from sklearn.metrics import precision_recall_fscore_support

from oracles import reference_report, tally
from vocoder_ood.datastore import OOD
from vocoder_ood.detector import decide
from vocoder_ood.metrics import MetricsReport, confusion, report


def test_confusion_perfect_and_all_ood():
    cm = confusion([0, 1, 2, OOD], [0, 1, 2, OOD], 3)
    assert np.array_equal(cm, np.diag([1, 1, 1, 1]))
    cm = confusion([OOD] * 4, [0] * 4, 3)
    assert cm[0, 3] == 4 and cm.sum() == 4


def test_confusion_accepts_decisions():
    decisions = [decide((0.1, 2.0), (1, 1)), decide((2.0, 2.0), (1, 1))]
    assert np.array_equal(confusion(decisions, [0, 1], 2), [[1, 0, 0], [0, 0, 1], [0, 0, 0]])


def test_confusion_errors():
    with pytest.raises(ValueError, match="length"):
        confusion([0], [0, 1], 2)
    with pytest.raises(ValueError, match="unknown label"):
        confusion([5], [0], 2)


def test_confusion_matches_tally():
    rng = np.random.default_rng(0)
    labels = [0, 1, 2, OOD]
    for _ in range(20):
        preds = [labels[i] for i in rng.integers(0, 4, 50)]
        truths = [labels[i] for i in rng.integers(0, 4, 50)]
        assert np.array_equal(confusion(preds, truths, 3), tally(preds, truths, 3))


def test_identity_report():
    r = report(np.diag([10, 10, 10]))
    assert (r.acc, r.map, r.recall, r.f1) == (1.0, 1.0, 1.0, 1.0)


def test_two_class_hand_example():
    r = report(np.array([[8, 2], [3, 7]]))
    assert r.acc == 0.75
    assert r.precision_per_class == pytest.approx([8 / 11, 7 / 9], abs=1e-15)
    assert r.recall_per_class == pytest.approx([0.8, 0.7], abs=1e-15)
    f0 = 2 * (8 / 11) * 0.8 / (8 / 11 + 0.8)
    f1 = 2 * (7 / 9) * 0.7 / (7 / 9 + 0.7)
    assert f0 == pytest.approx(0.7619047619, abs=1e-9) and f1 == pytest.approx(0.7368421053, abs=1e-9)
    assert r.f1 == pytest.approx((f0 + f1) / 2, abs=1e-15)
    assert round(r.f1, 4) == 0.7494


def test_empty_column_no_division_error():
    r = report(np.array([[5, 0, 0], [3, 0, 2], [0, 0, 4]]))
    assert r.precision_per_class[1] == 0.0 and r.f1_per_class[1] == 0.0
    with pytest.raises(ValueError):
        report(np.zeros((3, 3)))


def test_only_ood_rows():
    cm = confusion([OOD, OOD, 0], [OOD, OOD, OOD], 2)
    r = report(cm)
    assert r.recall_per_class == [0.0, 0.0, pytest.approx(2 / 3)]


def test_against_sklearn_and_loops():
    rng = np.random.default_rng(42)
    for _ in range(200):
        k = int(rng.integers(2, 6))
        cm = rng.integers(0, 20, (k, k)) * (rng.random((k, k)) > 0.2)
        if cm.sum() == 0:
            cm[0, 0] = 1
        r = report(cm)
        acc, p, rec, f = reference_report(cm.tolist())
        assert abs(r.acc - acc) <= 1e-12 and abs(r.map - p) <= 1e-12
        assert abs(r.recall - rec) <= 1e-12 and abs(r.f1 - f) <= 1e-12
        y_true = np.repeat(np.arange(k), cm.sum(axis=1))
        y_pred = np.concatenate([np.repeat(np.arange(k), row) for row in cm])
        sp, sr, sf, _ = precision_recall_fscore_support(y_true, y_pred, labels=range(k), zero_division=0)
        np.testing.assert_allclose(r.precision_per_class, sp, atol=1e-12)
        np.testing.assert_allclose(r.recall_per_class, sr, atol=1e-12)
        np.testing.assert_allclose(r.f1_per_class, sf, atol=1e-12)


def test_permutation_invariance():
    rng = np.random.default_rng(1)
    cm = rng.integers(0, 10, (4, 4))
    perm = rng.permutation(4)
    a, b = report(cm), report(cm[np.ix_(perm, perm)])
    for key in ("acc", "map", "recall", "f1"):
        assert getattr(a, key) == pytest.approx(getattr(b, key), abs=1e-15)
    assert b.f1_per_class == pytest.approx([a.f1_per_class[i] for i in perm])


def test_bounds_and_acc_one_iff_diagonal():
    rng = np.random.default_rng(3)
    for _ in range(50):
        cm = rng.integers(0, 5, (3, 3))
        cm[0, 0] += 1
        r = report(cm)
        assert all(0 <= v <= 1 for v in (r.acc, r.map, r.recall, r.f1))
        assert (r.acc == 1.0) == (np.count_nonzero(cm - np.diag(np.diag(cm))) == 0)


def test_report_serialization_and_table():
    r = report(np.array([[8, 2], [3, 7]]))
    assert MetricsReport.from_json(r.to_json()) == r
    lines = r.table("demo").splitlines()
    assert lines[0].split() == ["Model", "Acc", "MAP", "Recall", "F1"]
    assert lines[1].split()[1] == "75.00"
