import numpy as np
import pytest

from twostepda.errors import DimensionError, EvaluationError
from twostepda.metrics import ConfusionMatrix, confusion, iou


def set_oracle(pred, gt, num_classes):
    """IoU per class from pixel-coordinate sets."""
    out = []
    coords = [(i, j) for i in range(gt.shape[0]) for j in range(gt.shape[1])]
    for c in range(num_classes):
        a = {x for x in coords if pred[x] == c}
        b = {x for x in coords if gt[x] == c}
        union = a | b
        out.append(None if not union else len(a & b) / len(union))
    return out


def test_perfect_prediction():
    gt = np.array([[0, 1], [2, 2]])
    res = iou(ConfusionMatrix(3).accumulate(gt, gt))
    assert res.per_class == [1.0, 1.0, 1.0] and res.miou == 1.0


def test_hand_example():
    gt = np.array([[0, 0], [1, 1]])
    pred = np.zeros((2, 2), int)
    res = iou(ConfusionMatrix(2).accumulate(pred, gt))
    assert res.per_class == [0.5, 0.0]
    assert res.miou == 0.25


def test_diagonal_counts_pixels():
    gt = np.random.default_rng(0).integers(0, 4, size=(5, 7))
    cm = ConfusionMatrix(4).accumulate(gt, gt)
    assert np.trace(cm.counts) == 35 and cm.total == 35


def test_accumulate_is_additive():
    rng = np.random.default_rng(1)
    p1, g1, p2, g2 = (rng.integers(0, 3, size=(4, 4)) for _ in range(4))
    split = ConfusionMatrix(3).accumulate(p1, g1).accumulate(p2, g2)
    joined = ConfusionMatrix(3).accumulate(np.concatenate([p1, p2]), np.concatenate([g1, g2]))
    np.testing.assert_array_equal(split.counts, joined.counts)
    assert iou(split).miou == iou(joined).miou


def test_empty_input_leaves_matrix_unchanged():
    cm = ConfusionMatrix(3)
    out = cm.accumulate(np.zeros((0,), int), np.zeros((0,), int))
    np.testing.assert_array_equal(out.counts, 0)


def test_accumulate_returns_new_matrix():
    cm = ConfusionMatrix(2)
    cm.accumulate(np.zeros((2, 2), int), np.zeros((2, 2), int))
    assert cm.total == 0


def test_errors():
    with pytest.raises(DimensionError):
        ConfusionMatrix(2).accumulate(np.zeros((2, 2), int), np.zeros((2, 3), int))
    with pytest.raises(EvaluationError):
        iou(ConfusionMatrix(3))


def test_undefined_classes_excluded():
    gt = np.zeros((2, 2), int)
    res = iou(ConfusionMatrix(3).accumulate(gt, gt))
    assert res.per_class == [1.0, None, None] and res.miou == 1.0
    with pytest.raises(EvaluationError):
        res.subset_miou([1, 2])


def test_subset_miou():
    gt = np.array([[0, 0], [1, 2]])
    pred = np.array([[0, 1], [1, 2]])
    res = iou(ConfusionMatrix(3).accumulate(pred, gt))
    assert res.subset_miou([0, 2]) == pytest.approx((0.5 + 1.0) / 2)


@pytest.mark.parametrize("num_classes", [2, 3, 5])
def test_matches_set_oracle(num_classes):
    rng = np.random.default_rng(num_classes)
    for _ in range(200):
        gt = rng.integers(0, num_classes, size=(4, 4))
        pred = rng.integers(0, num_classes, size=(4, 4))
        res = iou(ConfusionMatrix(num_classes).accumulate(pred, gt))
        assert res.per_class == set_oracle(pred, gt, num_classes)


def test_relabeling_symmetry():
    rng = np.random.default_rng(3)
    gt = rng.integers(0, 4, size=(6, 6))
    pred = rng.integers(0, 4, size=(6, 6))
    perm = np.array([2, 0, 3, 1])
    a = iou(ConfusionMatrix(4).accumulate(pred, gt))
    b = iou(ConfusionMatrix(4).accumulate(perm[pred], perm[gt]))
    for c in range(4):
        assert a.per_class[c] == b.per_class[perm[c]]


def test_reports():
    gt = np.array([[0, 0], [1, 1]])
    res = iou(confusion([np.zeros((2, 2), int)], [gt], 2))
    assert res.to_csv() == "class,iou\n0,0.500000\n1,0.000000\n"
    summary = res.summary([0])
    assert summary["miou"] == 0.25 and summary["subset_miou"] == 0.5
    assert ConfusionMatrix(2).accumulate(gt, gt).accuracy() == 1.0
