"""Global assembler: anchor-derived location mask and candidate filtering."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .geometry import (Anchor3D, CameraModel, EllipseFrame, build_ellipse_frame, image_to_local,
                       local_to_image, project_anchor)
from .predictor import CandidatePoint

# keeps boundary points (the anchors themselves) inside despite rounding
_BOUNDARY_TOL = 1e-12


@dataclass(frozen=True)
class SeatConfig:
    """Per-seat geometry and decision thresholds.

    Exactly one of ``d_minor`` (pixels) or ``d_minor_ratio`` (fraction of the
    projected anchor distance) sets the ellipse minor axis; ``d_minor`` wins
    when both are given.
    """

    anchor_tr: Anchor3D
    anchor_bl: Anchor3D
    name: str = "seat"
    d_minor: float | None = None
    d_minor_ratio: float = 0.45
    gamma_pre: float = 0.5
    angle_threshold: float = 30.0
    min_candidates: int = 20

    def __post_init__(self):
        if self.d_minor is not None and not self.d_minor > 0:
            raise ParameterError("d_minor must be positive")
        if not 0 < self.d_minor_ratio <= 1:
            raise ParameterError("d_minor_ratio must lie in (0, 1]")
        if not 0 < self.gamma_pre <= 1:
            raise ParameterError("gamma_pre must lie in (0, 1]")
        if not 0 < self.angle_threshold < 90:
            raise ParameterError("angle_threshold must lie in (0, 90) degrees")
        if self.min_candidates < 1:
            raise ParameterError("min_candidates must be positive")

    def resolve_d_minor(self, d_major: float) -> float:
        return float(self.d_minor) if self.d_minor is not None else self.d_minor_ratio * d_major


@dataclass(frozen=True)
class LocationMask:
    """Closed ellipse in the anchor frame; the two anchors lie on its boundary."""

    frame: EllipseFrame

    @property
    def semi_axes(self) -> tuple[float, float]:
        return self.frame.d_major / 2.0, self.frame.d_minor / 2.0

    def membership(self, points) -> np.ndarray:
        """Vectorised containment for an ``(n, 2)`` array of image points."""
        local = image_to_local(self.frame, np.asarray(points, dtype=float).reshape(-1, 2))
        a, b = self.semi_axes
        return local[:, 0] ** 2 / a**2 + local[:, 1] ** 2 / b**2 <= 1.0 + _BOUNDARY_TOL

    def contains(self, p) -> bool:
        return bool(self.membership(p)[0])

    def boundary(self, count: int = 180) -> np.ndarray:
        """Image-space polygon approximating the mask outline."""
        t = np.linspace(0.0, 2.0 * np.pi, count, endpoint=False)
        a, b = self.semi_axes
        return local_to_image(self.frame, np.stack([a * np.cos(t), b * np.sin(t)], axis=-1))


def anchor_points(cam: CameraModel, seat: SeatConfig) -> tuple[tuple[float, float], tuple[float, float]]:
    """Image positions of the top-right and bottom-left anchors."""
    return project_anchor(cam, seat.anchor_tr), project_anchor(cam, seat.anchor_bl)


def build_mask(cam: CameraModel, seat: SeatConfig) -> LocationMask:
    a_tr, a_bl = anchor_points(cam, seat)
    d_major = float(np.hypot(a_tr[0] - a_bl[0], a_tr[1] - a_bl[1]))
    frame = build_ellipse_frame(a_tr, a_bl, seat.resolve_d_minor(d_major))
    return LocationMask(frame)


def contains(mask: LocationMask, p) -> bool:
    return mask.contains(p)


def filter_candidates(cands: list[CandidatePoint], mask: LocationMask, gamma_pre: float) -> list[CandidatePoint]:
    """Keep candidates inside the mask whose score reaches ``gamma_pre``."""
    if not cands:
        return []
    pts = np.array([(c.x, c.y) for c in cands], dtype=float)
    inside = mask.membership(pts)
    return [c for c, ok in zip(cands, inside) if ok and c.score >= gamma_pre]
