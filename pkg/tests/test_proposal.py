"""
Proposal layout, decoding and baseline target assignment tests.

Run from repo root:
    python -m pytest tests/test_proposal.py -v
"""

from __future__ import annotations

import numpy as np
import pytest

from src.core import InputError, Point, Prediction
from src.proposal import (
    FeatureGridSpec,
    LayoutKind,
    ProposalModel,
    assign_nearest_gt,
    assign_nearest_proposal,
    decode,
    default_neg_threshold,
    head_confidence,
    init_model,
    make_layout,
)


def test_grid_layout_single_cell():
    layout = make_layout(FeatureGridSpec(1, 1, stride=8, points_per_cell=4), LayoutKind.GRID)
    assert layout.points.tolist() == [[2, 2], [6, 2], [2, 6], [6, 6]]


def test_center_layout_single_cell():
    layout = make_layout(FeatureGridSpec(1, 1, stride=8, points_per_cell=1), "center")
    assert layout.points.tolist() == [[4, 4]]


def test_layout_is_row_major_by_cell():
    layout = make_layout(FeatureGridSpec(2, 3, stride=8, points_per_cell=1))
    assert layout.points.tolist() == [[4, 4], [12, 4], [20, 4], [4, 12], [12, 12], [20, 12]]


def test_layout_points_stay_inside_their_cell():
    spec = FeatureGridSpec(3, 4, stride=16, points_per_cell=9)
    pts = make_layout(spec).points
    assert len(pts) == spec.total_proposals == 108
    cells = np.repeat(np.arange(12), 9)
    assert np.array_equal((pts[:, 1] // 16) * 4 + pts[:, 0] // 16, cells)


def test_grid_layout_needs_square_k():
    with pytest.raises(InputError, match="perfect-square"):
        make_layout(FeatureGridSpec(1, 1, points_per_cell=3))
    # the center layout takes any K
    assert len(make_layout(FeatureGridSpec(1, 1, points_per_cell=3), LayoutKind.CENTER)) == 3


def test_feature_grid_spec_for_image():
    spec = FeatureGridSpec.for_image(130, 64, stride=8, points_per_cell=4)
    assert (spec.height, spec.width) == (8, 17)
    with pytest.raises(InputError):
        FeatureGridSpec(0, 4)


def test_init_model_confidence_is_half():
    model = init_model(FeatureGridSpec(2, 2, points_per_cell=4))
    preds = decode(model)
    assert len(preds) == 16
    assert {p.confidence for p in preds} == {0.5}
    assert [(p.point.x, p.point.y) for p in preds] == [tuple(r) for r in model.layout.points.tolist()]


def test_decode_applies_scaled_offset():
    model = init_model(FeatureGridSpec(1, 1, points_per_cell=1), LayoutKind.CENTER)
    model.offsets[0] = (0.01, 0.02)
    (pred,) = decode(model)
    assert pred.point.x == pytest.approx(5.0)
    assert pred.point.y == pytest.approx(6.0)


def test_head_confidence_is_softmax_and_overflow_free():
    logits = np.array([[0.0, 0.0], [0.0, np.log(3.0)], [800.0, -800.0], [-800.0, 800.0]])
    conf = head_confidence(logits)
    assert conf[0] == 0.5
    assert conf[1] == pytest.approx(0.75)
    assert conf[2] == 0.0 and conf[3] == 1.0


def test_model_shape_validation():
    spec = FeatureGridSpec(1, 1, points_per_cell=4)
    layout = make_layout(spec)
    with pytest.raises(InputError):
        ProposalModel(spec, layout, np.zeros((3, 2)), np.zeros((4, 2)))
    with pytest.raises(InputError):
        ProposalModel(spec, layout, np.full((4, 2), np.nan), np.zeros((4, 2)))


def test_nearest_proposal_collisions_under_count():
    gt = [Point(3.5, 4), Point(4.5, 4), Point(20, 20)]
    props = [Prediction(Point(4, 4), 0.5), Prediction(Point(20, 21), 0.5), Prediction(Point(50, 50), 0.5)]
    target = assign_nearest_proposal(gt, props)
    assert target.pairs == ((0, 0), (1, 0), (2, 1))
    assert target.positive_count == 2
    assert target.negatives == frozenset({2})


def test_nearest_gt_duplicates_over_count():
    gt = [Point(4, 4)]
    props = [Prediction(Point(4, 4), 0.5), Prediction(Point(8, 4), 0.5), Prediction(Point(30, 30), 0.5)]
    target = assign_nearest_gt(gt, props, neg_threshold=12.0)
    assert target.pairs == ((0, 0), (0, 1))
    assert target.positive_count == 2
    assert target.distinct_gt == 1
    assert target.negatives == frozenset({2})


def test_nearest_gt_empty_ground_truth():
    target = assign_nearest_gt([], [Prediction(Point(0, 0), 0.5)], neg_threshold=12.0)
    assert target.pairs == () and target.negatives == frozenset({0})


def test_default_neg_threshold_scales_with_stride():
    assert default_neg_threshold(FeatureGridSpec(1, 1, stride=8)) == 12.0
