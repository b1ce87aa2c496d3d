import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from textforge.geometry import (
    BoundingBoxSet,
    box_area,
    box_iou,
    mean_pairwise_iou,
)

UNIT = st.floats(min_value=0.0, max_value=1.0, allow_nan=False, width=32)


@st.composite
def unit_boxes(draw):
    x0, x1 = sorted((draw(UNIT), draw(UNIT)))
    y0, y1 = sorted((draw(UNIT), draw(UNIT)))
    # keep strictly positive extent so IoU et al. are well defined
    return (x0, y0, max(x1, x0 + 1e-3), max(y1, y0 + 1e-3))


def test_iou_identity():
    b = (0.1, 0.1, 0.5, 0.6)
    assert box_iou(b, b) == pytest.approx(1.0)


def test_iou_disjoint_is_zero():
    assert box_iou((0.0, 0.0, 0.2, 0.2), (0.5, 0.5, 0.9, 0.9)) == 0.0


def test_iou_known_value():
    # two unit-half boxes overlapping in a quarter
    a = (0.0, 0.0, 0.5, 0.5)
    b = (0.25, 0.0, 0.75, 0.5)
    inter = 0.25 * 0.5
    union = 2 * 0.25 - inter
    assert box_iou(a, b) == pytest.approx(inter / union)


def test_degenerate_box_warns_and_returns_zero():
    with pytest.warns(UserWarning):
        assert box_iou((0.1, 0.1, 0.1, 0.5), (0.0, 0.0, 1.0, 1.0)) == 0.0


@given(unit_boxes(), unit_boxes())
def test_iou_symmetric_and_bounded(a, b):
    v = box_iou(a, b)
    assert 0.0 <= v <= 1.0 + 1e-12
    assert v == pytest.approx(box_iou(b, a))


@given(unit_boxes())
def test_area_nonnegative(b):
    assert box_area(b) >= 0.0


def test_canonical_sorts_coordinates():
    flipped = BoundingBoxSet(np.array([[0.8, 0.9, 0.2, 0.1]]))
    canon = flipped.canonical()
    canon.validate()
    assert canon.boxes[0].tolist() == [0.2, 0.1, 0.8, 0.9]


def test_validate_rejects_out_of_unit():
    with pytest.raises(ValueError):
        BoundingBoxSet(np.array([[-0.1, 0.0, 0.5, 0.5]])).validate()
    with pytest.raises(ValueError):
        BoundingBoxSet(np.array([[0.0, 0.0, 1.2, 0.5]])).validate()


def test_validate_rejects_inverted():
    with pytest.raises(ValueError):
        BoundingBoxSet(np.array([[0.7, 0.1, 0.2, 0.5]])).validate()


def test_empty_set_validates():
    BoundingBoxSet(np.zeros((0, 4))).validate()


@given(st.lists(unit_boxes(), min_size=1, max_size=5))
def test_pixel_round_trip_error_bounded(boxes):
    """to_pixels rounds to integers; round-tripping back must stay within
    half a pixel per coordinate."""
    h = w = 64
    bs = BoundingBoxSet(np.array(boxes))
    px = bs.to_pixels(h, w)
    back = BoundingBoxSet.from_pixels(px, h, w)
    assert np.abs(back.boxes - bs.boxes).max() <= (0.5 / 64) + 1e-9


def test_to_pixels_known_values():
    bs = BoundingBoxSet(np.array([[0.0, 0.0, 0.5, 1.0]]))
    assert bs.to_pixels(100, 200).tolist() == [[0, 0, 100, 100]]


def test_mean_pairwise_iou_pairs_by_index():
    a = np.array([[0.0, 0.0, 0.5, 0.5], [0.5, 0.5, 1.0, 1.0]])
    assert mean_pairwise_iou(a, a) == pytest.approx(1.0)
    b = a[::-1].copy()
    assert mean_pairwise_iou(a, b) == pytest.approx(0.0)


def test_mean_pairwise_iou_shape_mismatch():
    with pytest.raises(ValueError):
        mean_pairwise_iou(np.zeros((2, 4)), np.zeros((3, 4)))
