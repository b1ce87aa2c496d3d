"""Axis-aligned box utilities shared by layout, rendering, and evaluation.

Boxes are (x0, y0, x1, y1) with the left-top point first and the
bottom-right point second. Normalized boxes live in [0, 1]; pixel boxes are
in image coordinates with an exclusive bottom-right edge.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

Box = tuple[float, float, float, float]


@dataclass
class BoundingBoxSet:
    """K boxes, normalized to [0, 1], ordered like the keywords they place."""

    boxes: np.ndarray  # (K, 4) float

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)

    def __len__(self) -> int:
        return self.boxes.shape[0]

    def validate(self) -> None:
        b = self.boxes
        if len(b) == 0:
            return
        if b.min() < 0.0 or b.max() > 1.0:
            raise ValueError("coordinates must lie in [0, 1]")
        if not (np.all(b[:, 0] < b[:, 2]) and np.all(b[:, 1] < b[:, 3])):
            raise ValueError("boxes must have x0 < x1 and y0 < y1")

    def canonical(self) -> "BoundingBoxSet":
        """Sort each coordinate pair so x0 <= x1 and y0 <= y1."""
        b = self.boxes.copy()
        x = np.sort(b[:, [0, 2]], axis=1)
        y = np.sort(b[:, [1, 3]], axis=1)
        return BoundingBoxSet(np.stack([x[:, 0], y[:, 0], x[:, 1], y[:, 1]], axis=1))

    def to_pixels(self, height: int, width: int) -> np.ndarray:
        """Integer pixel boxes (x0, y0, x1, y1), bottom-right exclusive."""
        b = self.boxes * np.array([width, height, width, height])
        return np.rint(b).astype(np.int64)

    @classmethod
    def from_pixels(cls, boxes, height: int, width: int) -> "BoundingBoxSet":
        b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
        return cls(b / np.array([width, height, width, height]))


def box_area(b: Box) -> float:
    return max(0.0, b[2] - b[0]) * max(0.0, b[3] - b[1])


def box_iou(a: Box, b: Box) -> float:
    """Intersection over union; 0 for disjoint or degenerate boxes."""
    area_a, area_b = box_area(a), box_area(b)
    if area_a == 0.0 or area_b == 0.0:
        warnings.warn("IoU of a degenerate zero-area box is 0", stacklevel=2)
        return 0.0
    ix0, iy0 = max(a[0], b[0]), max(a[1], b[1])
    ix1, iy1 = min(a[2], b[2]), min(a[3], b[3])
    inter = max(0.0, ix1 - ix0) * max(0.0, iy1 - iy0)
    union = area_a + area_b - inter
    return inter / union


def mean_pairwise_iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean IoU over index-paired boxes of two equal-length (K, 4) arrays."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 4)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 4)
    if pred.shape != gt.shape:
        raise ValueError(f"box count mismatch: {pred.shape} vs {gt.shape}")
    if len(pred) == 0:
        return 0.0
    return float(np.mean([box_iou(tuple(p), tuple(g)) for p, g in zip(pred, gt)]))
