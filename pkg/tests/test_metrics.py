import numpy as np
import pytest

from anyprop.metrics import ConfusionMatrix, confusion, miou
from anyprop.scene import LabelMap


def brute_force_confusion(pred, gt, k):
    counts = np.zeros((k, k), dtype=np.int64)
    for p, g in zip(pred.ravel(), gt.ravel()):
        counts[g, p] += 1
    return counts


class TestMiou:
    def test_perfect_prediction(self):
        rng = np.random.default_rng(100)
        labels = rng.integers(0, 5, (10, 10))
        _, _, m = miou(labels, labels, 5)
        assert m == 1.0

    def test_fully_inverted_binary(self):
        gt = np.array([[0, 0], [1, 1]])
        _, per, m = miou(1 - gt, gt, 2)
        assert per[0] == 0.0 and per[1] == 0.0
        assert m == 0.0

    def test_hand_computed_2x2(self):
        gt = np.array([[0, 0], [1, 1]])
        pred = np.array([[0, 1], [1, 1]])
        cm, per, m = miou(pred, gt, 2)
        assert per[0] == pytest.approx(0.5)
        assert per[1] == pytest.approx(2.0 / 3.0)
        assert m == pytest.approx(7.0 / 12.0)
        assert cm.total() == 4

    def test_zero_union_excluded(self):
        gt = np.zeros((3, 3), dtype=np.int64)
        pred = np.zeros((3, 3), dtype=np.int64)
        _, per, m = miou(pred, gt, 4)
        assert per[0] == 1.0
        assert np.isnan(per[1:]).all()
        assert m == 1.0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(101)
        for _ in range(10):
            h = int(rng.integers(1, 64))
            w = int(rng.integers(1, 64))
            k = int(rng.integers(2, 12))
            gt = rng.integers(0, k, (h, w))
            pred = rng.integers(0, k, (h, w))
            cm, _, _ = miou(pred, gt, k)
            assert np.array_equal(cm.counts, brute_force_confusion(pred, gt, k))

    def test_label_map_inputs(self):
        gt = LabelMap(np.array([[0, 1]], dtype=np.int32), 0, 3)
        pred = LabelMap(np.array([[0, 1]], dtype=np.int32), 0, 3)
        _, _, m = miou(pred, gt)
        assert m == 1.0

    def test_class_count_mismatch(self):
        a = LabelMap(np.zeros((2, 2), dtype=np.int32), 0, 3)
        b = LabelMap(np.zeros((2, 2), dtype=np.int32), 0, 4)
        with pytest.raises(ValueError):
            miou(a, b)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            confusion(np.zeros((2, 2), dtype=int), np.zeros((3, 3), dtype=int), 2)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            confusion(np.full((2, 2), 5), np.zeros((2, 2), dtype=int), 4)


class TestConfusionMatrix:
    def test_total_is_pixel_count(self):
        rng = np.random.default_rng(102)
        gt = rng.integers(0, 3, (8, 8))
        pred = rng.integers(0, 3, (8, 8))
        cm = confusion(pred, gt, 3)
        assert cm.total() == 64

    def test_rows_are_ground_truth(self):
        gt = np.array([[1]])
        pred = np.array([[2]])
        cm = confusion(pred, gt, 3)
        assert cm.counts[1, 2] == 1

    def test_validation(self):
        with pytest.raises(ValueError):
            ConfusionMatrix(np.zeros((2, 3), dtype=np.int64))
        with pytest.raises(ValueError):
            ConfusionMatrix(np.full((2, 2), -1, dtype=np.int64))
