"""ON / UNDER / OFF decision from the fitted belt.

A belt worn over the shoulder rises steeply from the buckle-side anchor; one
routed under the arm runs much flatter.  The decision uses the median angle
between the image x-axis and the segments joining the bottom-left anchor to
points sampled along the fitted curve.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .assembler import SeatConfig
from .shape import BeltCurve, sample_curve

SAMPLE_COUNT = 32
ANCHOR_EPS = 1e-9


class Usage(str, enum.Enum):
    ON = "ON"
    UNDER = "UNDER"
    OFF = "OFF"


@dataclass(frozen=True)
class UsageResult:
    label: Usage
    median_angle: float | None = None
    confidence: float = 0.0

    def to_dict(self) -> dict:
        return {"label": self.label.value, "median_angle": self.median_angle, "confidence": self.confidence}


def segment_angles(points, anchor) -> np.ndarray:
    """Absolute angle in degrees between the image x-axis and ``anchor -> point``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    d = pts - np.asarray(anchor, dtype=float)
    return np.degrees(np.abs(np.arctan2(d[:, 1], d[:, 0])))


def median_angle(points, anchor) -> float:
    """Median of :func:`segment_angles`, ignoring points that sit on the anchor.

    A curve sampled end to end starts at the anchor itself; that segment has
    no direction and its angle would be rounding noise.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    dist = np.hypot(*(pts - np.asarray(anchor, dtype=float)).T)
    keep = dist > ANCHOR_EPS * max(float(dist.max(initial=0.0)), 1.0)
    return float(np.median(segment_angles(pts[keep], anchor)))


def classify(curve: BeltCurve | None, seat: SeatConfig, bl_anchor_img) -> UsageResult:
    if curve is None or curve.inlier_count < seat.min_candidates:
        return UsageResult(Usage.OFF)
    angle = median_angle(sample_curve(curve, SAMPLE_COUNT), bl_anchor_img)
    label = Usage.ON if angle >= seat.angle_threshold else Usage.UNDER
    return UsageResult(label, angle, curve.inlier_ratio)
