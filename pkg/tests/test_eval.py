import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from floorloc.errors import LengthMismatch, TooShort
from floorloc.eval import (
    SequenceResult,
    heading_errors,
    pooled_rmse,
    position_errors,
    rmse_window,
    sequence_success,
    single_frame_recall,
    success_summary,
    threshold_label,
)
from floorloc.floorplan import Pose2


def line(errors, phi=0.0):
    """Ground truth at the origin, estimates offset along x by ``errors``."""
    gt = [Pose2(0.0, 0.0, 0.0) for _ in errors]
    est = [Pose2(e, 0.0, phi) for e in errors]
    return est, gt


class TestErrors:
    def test_position(self):
        est = [Pose2(3.0, 4.0, 0.0), Pose2(1.0, 1.0, 0.0)]
        gt = [Pose2(0.0, 0.0, 1.0), Pose2(1.0, 1.0, 2.0)]
        np.testing.assert_allclose(position_errors(est, gt), [5.0, 0.0])

    def test_heading_wraps(self):
        est = [Pose2(0, 0, math.radians(175)), Pose2(0, 0, math.radians(-90))]
        gt = [Pose2(0, 0, math.radians(-175)), Pose2(0, 0, math.radians(90))]
        np.testing.assert_allclose(heading_errors(est, gt), [10.0, 180.0])

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            position_errors([Pose2(0, 0, 0)], [])


class TestSequenceMetrics:
    def test_success_boundary_inclusive(self):
        est, gt = line([5.0] * 5 + [1.0] * 10)
        assert sequence_success(est, gt, 1.0, 10)
        est, gt = line([5.0] * 5 + [1.0] * 9 + [1.0 + 1e-9])
        assert not sequence_success(est, gt, 1.0, 10)

    def test_only_last_window_counts(self):
        est, gt = line([0.0] * 10 + [3.0] + [0.0] * 9)
        assert not sequence_success(est, gt)
        est, gt = line([3.0] + [0.0] * 10)
        assert sequence_success(est, gt)

    def test_rmse_hand_value(self):
        # errors 0 and 5 alternating over 10 frames: sqrt(mean([0, 25] * 5)) = sqrt(12.5)
        est, gt = line([9.0, 9.0] + [0.0, 5.0] * 5)
        assert rmse_window(est, gt) == pytest.approx(math.sqrt(12.5))

    def test_too_short(self):
        est, gt = line([0.0] * 9)
        with pytest.raises(TooShort):
            sequence_success(est, gt)
        with pytest.raises(TooShort):
            SequenceResult(est, gt)

    def test_prefix(self):
        est, gt = line([0.0] * 10 + [4.0] * 10)
        r = SequenceResult(est, gt)
        assert not r.success
        assert r.prefix(10).success
        assert r.prefix(15).rmse_window == pytest.approx(math.sqrt(5 * 16 / 10))


class TestAggregates:
    def test_summary(self):
        good = SequenceResult(*line([0.3] * 10))
        bad = SequenceResult(*line([2.0] * 10))
        s = success_summary([good, good, bad])
        assert s["n"] == 3 and s["n_success"] == 2
        assert s["success_rate"] == pytest.approx(2 / 3)
        assert s["rmse_succ"] == pytest.approx(0.3)
        assert s["rmse_all"] == pytest.approx(math.sqrt((2 * 0.09 + 4.0) / 3))

    def test_pooled_not_mean_of_rmse(self):
        a = SequenceResult(*line([1.0] * 10))
        b = SequenceResult(*line([3.0] * 10))
        assert pooled_rmse([a, b]) == pytest.approx(math.sqrt(5.0))
        assert pooled_rmse([]) is None

    def test_empty_summary(self):
        s = success_summary([])
        assert s["success_rate"] is None and s["rmse_succ"] is None


class TestRecall:
    def test_labels(self):
        assert threshold_label(1.0) == "1m"
        assert threshold_label(0.5, 30.0) == "0.5m 30deg"

    def test_enumerated(self):
        errs = [0.05, 0.4, 0.9, 1.5, 3.0, 7.0, 20.0]
        pairs = [(Pose2(e, 0.0, 0.0), Pose2(0.0, 0.0, 0.0)) for e in errs]
        table = single_frame_recall(pairs)
        want = {"0.1m": 1, "0.5m": 2, "1m": 3, "1m 30deg": 3, "2m": 4, "5m": 5, "10m": 6}
        assert table == {k: v / 7 for k, v in want.items()}

    def test_heading_threshold(self):
        pairs = [
            (Pose2(0.2, 0.0, math.radians(40)), Pose2(0.0, 0.0, 0.0)),
            (Pose2(0.2, 0.0, math.radians(20)), Pose2(0.0, 0.0, 0.0)),
        ]
        table = single_frame_recall(pairs, [(1.0, None), (1.0, 30.0)])
        assert table == {"1m": 1.0, "1m 30deg": 0.5}

    def test_empty(self):
        with pytest.raises(ValueError):
            single_frame_recall([])

    @given(st.lists(st.floats(0.0, 50.0), min_size=1, max_size=30))
    def test_monotone_in_threshold(self, errs):
        pairs = [(Pose2(e, 0.0, 0.0), Pose2(0.0, 0.0, 0.0)) for e in errs]
        values = list(single_frame_recall(pairs, [(m, None) for m in (0.1, 0.5, 1.0, 2.0, 5.0, 10.0)]).values())
        assert values == sorted(values)
