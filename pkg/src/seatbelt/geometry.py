"""Coordinate machinery shared by every stage.

Conventions
-----------
Image coordinates are ``(x, y)`` with ``x`` along columns and ``y`` along
rows, origin at the centre of the top-left pixel, ``y`` pointing down.

The ellipse-local frame has its origin at the midpoint of the two projected
anchors and its x-axis pointing from the bottom-left anchor to the top-right
anchor.  A local point maps to the image through a rotation by ``theta_s``
followed by the origin offset; with ``y`` pointing down the local y-axis is
the x-axis turned 90 degrees clockwise on screen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .errors import BehindCameraError, ConfigError, GeometryError, ParameterError

_ORTHO_TOL = 1e-9
_SNAP_TOL = 1e-9


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera: intrinsics ``fx, fy, cx, cy`` and extrinsics ``R, T``.

    ``R`` maps vehicle-frame directions to the camera frame; ``T`` is the
    camera-frame translation in millimetres, so ``X_cam = R @ X + T``.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    R: tuple[float, ...] = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0)
    T: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ParameterError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if len(self.R) != 9 or len(self.T) != 3:
            raise ParameterError("R needs 9 numbers (row-major) and T needs 3")
        object.__setattr__(self, "R", tuple(float(v) for v in self.R))
        object.__setattr__(self, "T", tuple(float(v) for v in self.T))
        R = self.rotation
        if np.max(np.abs(R.T @ R - np.eye(3))) > _ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL:
            raise ParameterError("R must be a proper rotation (orthonormal, det = +1)")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def rotation(self) -> np.ndarray:
        return np.asarray(self.R, dtype=float).reshape(3, 3)

    @property
    def translation(self) -> np.ndarray:
        return np.asarray(self.T, dtype=float)

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "R": list(self.R), "T": list(self.T),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CameraModel":
        try:
            return cls(
                fx=float(data["fx"]), fy=float(data["fy"]),
                cx=float(data["cx"]), cy=float(data["cy"]),
                R=tuple(float(v) for v in np.ravel(data.get("R", np.eye(3)))),
                T=tuple(float(v) for v in data.get("T", (0.0, 0.0, 0.0))),
            )
        except KeyError as exc:
            raise ConfigError(f"calibration is missing field {exc.args[0]!r}") from exc


def load_calibration(path: str | Path) -> CameraModel:
    """Read a YAML calibration file (``fx, fy, cx, cy, R, T``)."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read calibration {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"calibration {path} must be a mapping")
    try:
        return CameraModel.from_dict(data)
    except ParameterError as exc:
        raise ConfigError(f"invalid calibration {path}: {exc}") from exc


def save_calibration(cam: CameraModel, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(cam.to_dict(), sort_keys=False))


@dataclass(frozen=True)
class Anchor3D:
    """Belt mounting point in the vehicle frame, millimetres."""

    X: float
    Y: float
    Z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.X, self.Y, self.Z], dtype=float)


@dataclass(frozen=True)
class EllipseFrame:
    """Ellipse-local coordinate frame spanned by two projected anchors.

    ``theta_s`` lies in ``(-pi, pi]``: the acos value, negated when the
    top-right anchor sits above the bottom-left one in the image.
    """

    origin_x: float
    origin_y: float
    theta_s: float
    d_major: float
    d_minor: float

    def __post_init__(self):
        if not (self.d_major > 0 and self.d_minor > 0):
            raise GeometryError("ellipse axes must be positive")
        if self.d_minor > self.d_major:
            raise GeometryError(f"d_minor ({self.d_minor}) exceeds d_major ({self.d_major})")

    @property
    def origin(self) -> np.ndarray:
        return np.array([self.origin_x, self.origin_y])

    @property
    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.theta_s), math.sin(self.theta_s)
        return np.array([[c, -s], [s, c]])

    def to_dict(self) -> dict:
        return {
            "origin": [self.origin_x, self.origin_y],
            "theta_s": self.theta_s,
            "d_major": self.d_major,
            "d_minor": self.d_minor,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EllipseFrame":
        ox, oy = data["origin"]
        return cls(float(ox), float(oy), float(data["theta_s"]),
                   float(data["d_major"]), float(data["d_minor"]))


def project_anchor(cam: CameraModel, a: Anchor3D) -> tuple[float, float]:
    """Pinhole projection of a vehicle-frame point to pixel coordinates."""
    p_cam = cam.rotation @ a.as_array() + cam.translation
    if not p_cam[2] > 0:
        raise BehindCameraError(f"anchor {a} has camera-frame depth {p_cam[2]:.6g} <= 0")
    uvw = cam.K @ p_cam
    return float(uvw[0] / uvw[2]), float(uvw[1] / uvw[2])


def back_project(cam: CameraModel, x: float, y: float, depth: float) -> Anchor3D:
    """Vehicle-frame point that projects to ``(x, y)`` at the given camera depth."""
    ray = np.array([(x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0])
    p_vehicle = cam.rotation.T @ (ray * depth - cam.translation)
    return Anchor3D(*(float(v) for v in p_vehicle))


def build_ellipse_frame(a_tr, a_bl, d_minor: float) -> EllipseFrame:
    """Frame with origin at the anchor midpoint and x-axis from ``a_bl`` to ``a_tr``."""
    x_tr, y_tr = float(a_tr[0]), float(a_tr[1])
    x_bl, y_bl = float(a_bl[0]), float(a_bl[1])
    dx, dy = x_tr - x_bl, y_tr - y_bl
    d_major = math.hypot(dx, dy)
    if d_major == 0.0:
        raise GeometryError("anchors coincide; the ellipse frame is undefined")
    if not d_minor > 0:
        raise GeometryError(f"d_minor must be positive, got {d_minor}")
    # clamp guards acos against |ratio| creeping past 1 by one ulp
    theta_s = math.acos(max(-1.0, min(1.0, dx / d_major)))
    if y_tr < y_bl:
        theta_s = -theta_s
    return EllipseFrame(
        origin_x=(x_tr + x_bl) / 2.0,
        origin_y=(y_tr + y_bl) / 2.0,
        theta_s=theta_s,
        d_major=d_major,
        d_minor=float(d_minor),
    )


def local_to_image(frame: EllipseFrame, p_local) -> np.ndarray:
    """Map local point(s), shape ``(2,)`` or ``(n, 2)``, to image coordinates."""
    p = np.asarray(p_local, dtype=float)
    c, s = math.cos(frame.theta_s), math.sin(frame.theta_s)
    x, y = p[..., 0], p[..., 1]
    return np.stack([c * x - s * y + frame.origin_x, s * x + c * y + frame.origin_y], axis=-1)


def image_to_local(frame: EllipseFrame, p_global) -> np.ndarray:
    """Inverse of :func:`local_to_image`."""
    p = np.asarray(p_global, dtype=float)
    c, s = math.cos(frame.theta_s), math.sin(frame.theta_s)
    dx, dy = p[..., 0] - frame.origin_x, p[..., 1] - frame.origin_y
    return np.stack([c * dx + s * dy, -s * dx + c * dy], axis=-1)


# ---------------------------------------------------------------------------
# Rotated patch sampling
# ---------------------------------------------------------------------------

def patch_offsets(L: int, theta: float) -> tuple[np.ndarray, np.ndarray]:
    """Source offsets ``(dx, dy)`` of every patch cell relative to the centre.

    Cell ``(i, j)`` (row, column, 0-based) sits at ``(j - k, i - k)`` before
    rotation, ``k = (L - 1) // 2``, so the centre cell lands on the pixel.
    Offsets within 1e-9 of an integer are snapped to it so that right-angle
    rotations sample pixel centres exactly.
    """
    k = (L - 1) // 2
    rel = np.arange(L, dtype=float) - k
    jj, ii = np.meshgrid(rel, rel)
    c, s = math.cos(theta), math.sin(theta)
    dx = c * jj - s * ii
    dy = s * jj + c * ii
    for arr in (dx, dy):
        near = np.abs(arr - np.round(arr)) < _SNAP_TOL
        arr[near] = np.round(arr[near])
    return dx, dy


def bilinear_sample(img: np.ndarray, xs: np.ndarray, ys: np.ndarray, pad_value: float = 0.0) -> np.ndarray:
    """Bilinear lookup; coordinates outside ``[0, W-1] x [0, H-1]`` give ``pad_value``."""
    img = np.asarray(img, dtype=float)
    H, W = img.shape
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    inside = (xs >= 0) & (xs <= W - 1) & (ys >= 0) & (ys <= H - 1)
    x0 = np.floor(np.where(inside, xs, 0)).astype(np.int64)
    y0 = np.floor(np.where(inside, ys, 0)).astype(np.int64)
    fx = np.where(inside, xs, 0) - x0
    fy = np.where(inside, ys, 0) - y0
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    top = (1 - fx) * img[y0, x0] + fx * img[y0, x1]
    bottom = (1 - fx) * img[y1, x0] + fx * img[y1, x1]
    out = (1 - fy) * top + fy * bottom
    return np.where(inside, out, pad_value)


def bilinear_taps(L: int, theta: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Integer offsets ``(ox, oy)`` and 4-tap bilinear weights per patch cell.

    Taps are ordered ``(x0, y0), (x0 + 1, y0), (x0, y0 + 1), (x0 + 1, y0 + 1)``.
    """
    dx, dy = patch_offsets(L, theta)
    ox, oy = np.floor(dx), np.floor(dy)
    fx, fy = dx - ox, dy - oy
    taps = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=-1)
    return ox.astype(np.int64), oy.astype(np.int64), taps


def sample_rotated_patch(img: np.ndarray, x: int, y: int, theta: float, L: int,
                         pad_value: float = 0.0) -> np.ndarray:
    """``L x L`` patch centred on pixel ``(x, y)`` with its columns turned by ``theta``.

    Cell ``(i, j)`` reads the image at ``(x, y) + Rot(theta) @ (j - k, i - k)``
    with bilinear interpolation; reads outside the image give ``pad_value``.
    """
    if L < 3 or L % 2 == 0:
        raise ParameterError(f"patch side must be odd and >= 3, got {L}")
    img = np.asarray(img, dtype=float)
    H, W = img.shape
    if not (0 <= x < W and 0 <= y < H):
        raise GeometryError(f"patch centre ({x}, {y}) outside {W}x{H} image")
    ox, oy, taps = bilinear_taps(L, theta)
    x0, y0 = x + ox, y + oy
    x1 = x0 + (taps[..., 1] + taps[..., 3] > 0)
    y1 = y0 + (taps[..., 2] + taps[..., 3] > 0)
    inside = (x0 >= 0) & (y0 >= 0) & (x1 <= W - 1) & (y1 <= H - 1)
    x0c, y0c = np.clip(x0, 0, W - 1), np.clip(y0, 0, H - 1)
    x1c, y1c = np.minimum(x0c + 1, W - 1), np.minimum(y0c + 1, H - 1)
    value = (taps[..., 0] * img[y0c, x0c] + taps[..., 1] * img[y0c, x1c]
             + taps[..., 2] * img[y1c, x0c] + taps[..., 3] * img[y1c, x1c])
    return np.where(inside, value, pad_value)
