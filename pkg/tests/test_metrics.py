import numpy as np
import pytest

from refsal.errors import ShapeError
from refsal.harness import EvalRecord
from refsal.metrics import aggregate_metrics, iou


def grid(cells, shape=(4, 4)):
    m = np.zeros(shape, dtype=np.uint8)
    for y, x in cells:
        m[y, x] = 1
    return m


def record(sample_id, expression, gt):
    return EvalRecord(
        sample_id=sample_id,
        width=gt.shape[1],
        height=gt.shape[0],
        image_ref=sample_id,
        expression=expression,
        proposals_path=None,
        gt=gt,
    )


class TestIou:
    def test_identical(self, rng):
        mask = (rng.random((5, 5)) < 0.5).astype(np.uint8)
        assert iou(mask, mask) == 1.0

    def test_disjoint(self):
        assert iou(grid([(0, 0)]), grid([(3, 3)])) == 0.0

    def test_half_overlap(self):
        a = np.ones((2, 2), dtype=np.uint8)
        b = grid([(0, 0), (0, 1)], shape=(2, 2))
        assert iou(a, b) == 0.5

    def test_both_empty_agree(self):
        assert iou(np.zeros((3, 3), np.uint8), np.zeros((3, 3), np.uint8)) == 1.0

    def test_one_empty(self):
        assert iou(grid([(0, 0)]), np.zeros((4, 4), np.uint8)) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            iou(np.zeros((2, 2), np.uint8), np.zeros((3, 3), np.uint8))


class TestAggregateMetrics:
    def hand_fixture(self):
        records = [
            record("m1", "the left box", grid([(0, 0), (0, 1), (1, 0), (1, 1)])),
            record("m2", "red box", grid([(0, 0), (0, 1)])),
            record("m3", "dog next to tree", grid([(2, 0), (2, 1), (2, 2)])),
        ]
        predictions = {
            "m1": grid([(0, 0), (0, 1)]),
            "m2": grid([(3, 2), (3, 3)]),
            "m3": grid([(2, 0), (2, 1), (2, 2)]),
        }
        return records, predictions

    def test_hand_computed_values(self):
        records, predictions = self.hand_fixture()
        report = aggregate_metrics(records, predictions)
        assert report.per_sample == {"m1": 0.5, "m2": 0.0, "m3": 1.0}
        assert report.miou == pytest.approx(0.5)
        # intersections 2+0+3 over unions 4+4+3
        assert report.oiou == pytest.approx(5.0 / 11.0)
        assert report.miou != report.oiou

    def test_position_split_partitions(self):
        records, predictions = self.hand_fixture()
        report = aggregate_metrics(records, predictions)
        assert report.position_count == 2
        assert report.others_count == 1
        assert report.position_count + report.others_count == len(records)
        assert report.position_miou == pytest.approx(0.75)
        assert report.others_miou == pytest.approx(0.0)

    def test_simple_mean(self):
        records, predictions = self.hand_fixture()
        report = aggregate_metrics(records, predictions)
        assert report.miou == pytest.approx(
            sum(report.per_sample.values()) / len(report.per_sample)
        )

    def test_equal_union_sizes_make_oiou_equal_miou(self):
        # every sample has union 4 (predictions are subsets of the gt), so
        # the weighted and unweighted means agree
        records = [
            record("a", "red box", grid([(0, 0), (0, 1), (1, 0), (1, 1)])),
            record("b", "blue box", grid([(0, 0), (0, 1), (1, 0), (1, 1)])),
        ]
        predictions = {
            "a": grid([(0, 0), (0, 1), (1, 0), (1, 1)]),
            "b": grid([(0, 0), (0, 1)]),
        }
        report = aggregate_metrics(records, predictions)
        assert report.miou == pytest.approx(0.75)
        assert report.miou == pytest.approx(report.oiou)

    def test_missing_predictions_listed_not_averaged(self):
        records, predictions = self.hand_fixture()
        del predictions["m2"]
        report = aggregate_metrics(records, predictions)
        assert report.missing == ["m2"]
        assert report.miou == pytest.approx(0.75)
        assert "m2" not in report.per_sample

    def test_empty_bucket_reported_absent(self):
        records = [
            record("p1", "the left box", grid([(0, 0)])),
            record("p2", "thing near the top", grid([(1, 1)])),
        ]
        predictions = {"p1": grid([(0, 0)]), "p2": grid([(1, 1)])}
        report = aggregate_metrics(records, predictions)
        assert report.others_miou is None
        assert report.others_count == 0
        assert "others_miou" not in report.to_dict()
        assert "position_miou" in report.to_dict()
