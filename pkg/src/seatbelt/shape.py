"""Polynomial belt model fitted in the ellipse-local frame.

A belt stretched away from the body can fold back on itself in image
coordinates, but stays a function of the position along the anchor axis.
Candidates are therefore moved into the ellipse frame, fitted there as
``y = b0 + b1 x + ... + bN x^N`` with MSAC outlier rejection, and mapped back
for display and usage classification.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial import polynomial as P

from .errors import DegenerateFitError, GeometryError, ParameterError
from .geometry import EllipseFrame, image_to_local, local_to_image

logger = logging.getLogger(__name__)

DEFAULT_ORDER = 4
_HYPOTHESIS_CHUNK = 128


@dataclass(frozen=True)
class MsacParams:
    iterations: int = 500
    inlier_tol: float = 2.0
    min_inlier_ratio: float = 0.25
    seed: int = 0
    # consensus extent along the anchor axis, as a fraction of the anchor
    # distance; only checked when fitting in an ellipse frame
    min_coverage: float = 0.0

    def __post_init__(self):
        if self.iterations < 1:
            raise ParameterError("iterations must be >= 1")
        if not self.inlier_tol > 0:
            raise ParameterError("inlier_tol must be positive")
        if not 0 <= self.min_inlier_ratio <= 1:
            raise ParameterError("min_inlier_ratio must lie in [0, 1]")
        if not 0 <= self.min_coverage <= 1:
            raise ParameterError("min_coverage must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {"iterations": self.iterations, "inlier_tol": self.inlier_tol,
                "min_inlier_ratio": self.min_inlier_ratio, "seed": self.seed,
                "min_coverage": self.min_coverage}


@dataclass(frozen=True)
class BeltCurve:
    """Fitted belt centreline.

    Attributes:
        coeffs: ``b0..bN`` in local-frame pixels.
        order: Polynomial order ``N``.
        inlier_count: Size of the final consensus set.
        inlier_ratio: ``inlier_count`` over all fitted points.
        rms_residual: RMS vertical residual over inliers, local pixels.
        frame: Ellipse frame the coefficients live in (``None`` for fits
            made directly in image coordinates).
        x_range: Local x extent of the inliers.
    """

    coeffs: tuple[float, ...]
    order: int
    inlier_count: int
    inlier_ratio: float
    rms_residual: float
    frame: EllipseFrame | None = None
    x_range: tuple[float, float] = (0.0, 0.0)

    def __call__(self, x):
        return P.polyval(np.asarray(x, dtype=float), np.asarray(self.coeffs))

    def to_dict(self) -> dict:
        return {
            "coeffs": list(self.coeffs),
            "order": self.order,
            "inlier_count": self.inlier_count,
            "inlier_ratio": self.inlier_ratio,
            "rms_residual": self.rms_residual,
            "x_range": list(self.x_range),
            "frame": self.frame.to_dict() if self.frame is not None else None,
        }


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        return np.empty((0, 2))
    return pts.reshape(-1, 2)


def _scaling(x: np.ndarray) -> tuple[float, float]:
    lo, hi = float(x.min()), float(x.max())
    centre, half = (lo + hi) / 2.0, (hi - lo) / 2.0
    return centre, (half if half > 0 else 1.0)


def _to_x_coeffs(coef_u: np.ndarray, centre: float, half: float, order: int) -> np.ndarray:
    """Re-express a polynomial in ``u = (x - centre) / half`` as one in ``x``."""
    poly = Polynomial(coef_u, domain=[centre - half, centre + half], window=[-1.0, 1.0])
    out = np.zeros(order + 1)
    c = poly.convert().coef
    out[:c.size] = c
    return out


def _lstsq_u(u: np.ndarray, y: np.ndarray, order: int) -> np.ndarray:
    V = P.polyvander(u, order)
    coef, *_ = np.linalg.lstsq(V, y, rcond=None)
    return coef


def fit_polynomial(points, N: int = DEFAULT_ORDER) -> np.ndarray:
    """Least-squares coefficients ``b0..bN`` of ``y = sum b_k x^k``."""
    pts = _as_points(points)
    if N < 0:
        raise ParameterError("polynomial order must be >= 0")
    if pts.shape[0] < N + 1 or np.unique(pts[:, 0]).size < N + 1:
        raise DegenerateFitError(f"need at least {N + 1} distinct x values for order {N}")
    centre, half = _scaling(pts[:, 0])
    coef_u = _lstsq_u((pts[:, 0] - centre) / half, pts[:, 1], N)
    return _to_x_coeffs(coef_u, centre, half, N)


def _truncated_cost(residuals: np.ndarray, tol2: float) -> np.ndarray:
    return np.minimum(residuals**2, tol2).sum(axis=-1)


def fit_msac(points, N: int = DEFAULT_ORDER, msac: MsacParams = MsacParams(),
             frame: EllipseFrame | None = None) -> BeltCurve | None:
    """Robust polynomial fit; ``None`` when no model gathers enough support.

    Support means at least ``N + 1`` inliers, an inlier ratio of at least
    ``msac.min_inlier_ratio`` and, when ``frame`` is given, a consensus set
    spanning ``msac.min_coverage`` of the anchor distance along local x.

    Points are sorted lexicographically before seeded sampling, so the
    result does not depend on input order.  Each hypothesis interpolates
    ``N + 1`` sampled points and is scored by the truncated quadratic loss
    ``sum(min(r^2, tol^2))``.  The winner's consensus set is refitted by
    least squares; the refit is kept only if it scores no worse.
    """
    pts = _as_points(points)
    n = pts.shape[0]
    m = N + 1
    if n < m:
        return None
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    x, y = pts[:, 0], pts[:, 1]
    if np.unique(x).size < m:
        return None
    centre, half = _scaling(x)
    u = (x - centre) / half
    V_all = P.polyvander(u, N)
    tol2 = msac.inlier_tol**2

    rng = np.random.default_rng(msac.seed)
    samples = np.array([rng.choice(n, m, replace=False) for _ in range(msac.iterations)])
    su = np.sort(u[samples], axis=1)
    valid = np.all(np.diff(su, axis=1) > 1e-12, axis=1)

    best_cost, best_coef = np.inf, None
    for lo in range(0, msac.iterations, _HYPOTHESIS_CHUNK):
        chunk = samples[lo:lo + _HYPOTHESIS_CHUNK][valid[lo:lo + _HYPOTHESIS_CHUNK]]
        if chunk.size == 0:
            continue
        coefs = np.linalg.solve(V_all[chunk], y[chunk][..., None])[..., 0]
        costs = _truncated_cost(y[None, :] - coefs @ V_all.T, tol2)
        i = int(np.argmin(costs))
        if costs[i] < best_cost:
            best_cost, best_coef = float(costs[i]), coefs[i]
    if best_coef is None:
        return None

    inliers = (y - V_all @ best_coef) ** 2 <= tol2
    if inliers.sum() >= m and np.unique(u[inliers]).size >= m:
        refit = _lstsq_u(u[inliers], y[inliers], N)
        if float(_truncated_cost(y - V_all @ refit, tol2)) <= best_cost:
            best_coef = refit
    resid = y - V_all @ best_coef
    inliers = resid**2 <= tol2
    count = int(inliers.sum())
    ratio = count / n
    if count < m or ratio < msac.min_inlier_ratio:
        logger.debug("msac rejected: %d/%d inliers", count, n)
        return None
    x_range = (float(x[inliers].min()), float(x[inliers].max()))
    if frame is not None and (x_range[1] - x_range[0]) < msac.min_coverage * frame.d_major:
        logger.debug("msac rejected: consensus spans %.1f of %.1f px", x_range[1] - x_range[0], frame.d_major)
        return None
    return BeltCurve(
        coeffs=tuple(float(c) for c in _to_x_coeffs(best_coef, centre, half, N)),
        order=N,
        inlier_count=count,
        inlier_ratio=ratio,
        rms_residual=float(np.sqrt(np.mean(resid[inliers] ** 2))),
        frame=frame,
        x_range=x_range,
    )


def model_shape(cands, frame: EllipseFrame, N: int = DEFAULT_ORDER,
                msac: MsacParams = MsacParams()) -> BeltCurve | None:
    """Fit the belt in the ellipse frame from image-space candidates."""
    if not cands:
        return None
    img_pts = np.array([(c.x, c.y) for c in cands], dtype=float)
    return fit_msac(image_to_local(frame, img_pts), N, msac, frame=frame)


def sample_curve(curve: BeltCurve, count: int = 32) -> np.ndarray:
    """``count`` image points evenly spaced in local x across the anchor span."""
    if count < 2:
        raise ParameterError("count must be >= 2")
    if curve.frame is None:
        raise GeometryError("curve has no ellipse frame to map back through")
    half = curve.frame.d_major / 2.0
    xs = np.linspace(-half, half, count)
    return local_to_image(curve.frame, np.stack([xs, curve(xs)], axis=-1))
