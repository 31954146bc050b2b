"""Local seatbelt predictor.

For every pixel and each of ``D`` patch directions the predictor resamples an
``L x L`` neighbourhood, collapses its gradient magnitude onto the patch
columns and looks for two parallel edges at a plausible spacing.  Two
direction-free checks, a Gaussian-weighted intensity window and a raw
roughness sum, gate the structural test.  The per-direction votes are
combined into a weighted score.

The tuning favours recall: stray background hits are expected and are
removed later by the location mask and the robust curve fit.

Curve indices in :func:`optimal_cut` and :func:`locate_peaks` are 1-based,
matching the patch column numbering ``1..L``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.signal import savgol_coeffs

from . import _kernels
from .errors import NoSignalError, ParameterError
from .geometry import bilinear_taps, sample_rotated_patch


@dataclass(frozen=True)
class PredictorParams:
    """Thresholds for the local predictor.

    Distances (``tau_*``, ``omega``, ``sigma``, ``stride``) are in pixels,
    ``delta_*`` in 8-bit intensity, ``phi_*`` in squared 8-bit intensity.
    ``rho_*`` bound the ratio of edge spacing to the larger edge peak of the
    projected gradient curve.
    """

    k: int = 7
    directions: int = 8
    weights: tuple[float, ...] | None = None
    tau_min: float = 4.0
    tau_max: float = 12.0
    rho_min: float = 0.02
    rho_max: float = 0.9
    delta_min: float = 30.0
    delta_max: float = 200.0
    sigma: float | None = None
    omega: int = 2
    phi_min: float = 0.0
    phi_max: float = 1500.0
    sg_window: int = 5
    sg_order: int = 2
    stride: int = 2
    pad_value: float = 0.0

    def __post_init__(self):
        if self.k < 1:
            raise ParameterError("k must be >= 1")
        if self.directions < 1:
            raise ParameterError("at least one direction is required")
        if self.weights is None:
            object.__setattr__(self, "weights", tuple([1.0 / self.directions] * self.directions))
        else:
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        w = np.asarray(self.weights)
        if w.shape != (self.directions,):
            raise ParameterError(f"expected {self.directions} weights, got {w.size}")
        if np.any(w < 0) or abs(math.fsum(self.weights) - 1.0) > 1e-9:
            raise ParameterError("direction weights must be nonnegative and sum to 1")
        if self.sigma is None:
            object.__setattr__(self, "sigma", self.L / 4.0)
        if not self.sigma > 0:
            raise ParameterError("sigma must be positive")
        for lo, hi in (("tau_min", "tau_max"), ("rho_min", "rho_max"),
                       ("delta_min", "delta_max"), ("phi_min", "phi_max")):
            a, b = getattr(self, lo), getattr(self, hi)
            if not (math.isfinite(a) and math.isfinite(b)) or a > b:
                raise ParameterError(f"need finite {lo} <= {hi}, got {a}, {b}")
        if self.omega < 0:
            raise ParameterError("omega must be >= 0")
        if self.sg_window % 2 == 0 or self.sg_window < 1:
            raise ParameterError("sg_window must be odd")
        if not 0 <= self.sg_order < self.sg_window:
            raise ParameterError("sg_order must be below sg_window")
        if self.sg_window > self.L:
            raise ParameterError(f"sg_window {self.sg_window} exceeds patch side {self.L}")
        if not 0 < self.stride <= self.L:
            raise ParameterError(f"stride must lie in (0, {self.L}]")

    @property
    def L(self) -> int:
        return 2 * self.k + 1

    @property
    def thetas(self) -> np.ndarray:
        return np.arange(self.directions) * (math.pi / self.directions)

    @cached_property
    def gaussian(self) -> np.ndarray:
        return gaussian_weights(self.L, self.sigma)

    @cached_property
    def sg_coefficients(self) -> np.ndarray:
        return savgol_coeffs(self.sg_window, self.sg_order, use="dot")

    @cached_property
    def tables(self):
        """Sampling offsets and bilinear taps for every direction and cell."""
        parts = [bilinear_taps(self.L, theta) for theta in self.thetas]
        ox = np.ascontiguousarray([p[0] for p in parts])
        oy = np.ascontiguousarray([p[1] for p in parts])
        taps = np.ascontiguousarray([p[2] for p in parts])
        exact = np.all(taps[..., 0] == 1.0, axis=(1, 2))
        # kernel layout: (D, 4, L*L)
        taps = np.ascontiguousarray(taps.reshape(len(parts), -1, 4).transpose(0, 2, 1))
        margin = int(max(np.abs(ox).max(), np.abs(oy).max())) + 1
        return ox, oy, taps, exact, margin

    def to_dict(self) -> dict:
        return {
            "k": self.k, "directions": self.directions, "weights": list(self.weights),
            "tau_min": self.tau_min, "tau_max": self.tau_max,
            "rho_min": self.rho_min, "rho_max": self.rho_max,
            "delta_min": self.delta_min, "delta_max": self.delta_max,
            "sigma": self.sigma, "omega": self.omega,
            "phi_min": self.phi_min, "phi_max": self.phi_max,
            "sg_window": self.sg_window, "sg_order": self.sg_order,
            "stride": self.stride, "pad_value": self.pad_value,
        }


@dataclass(frozen=True)
class DirectionResult:
    r: tuple[int, ...]
    score: float


@dataclass(frozen=True)
class CandidatePoint:
    """Pixel with a positive predictor score and its strongest direction."""

    x: int
    y: int
    score: float
    best_theta: float


def gaussian_weights(L: int, sigma: float) -> np.ndarray:
    """Isotropic Gaussian over the patch, centred on the middle cell, summing to 1."""
    c = (L - 1) / 2.0
    idx = np.arange(L, dtype=float)
    ii, jj = np.meshgrid(idx, idx, indexing="ij")
    w = np.exp(-((c - ii) ** 2 + (c - jj) ** 2) / (2.0 * sigma**2))
    return w / w.sum()


def gradient_projection(patch: np.ndarray) -> np.ndarray:
    """Column-wise sum of the patch gradient magnitude."""
    patch = np.asarray(patch, dtype=float)
    gy, gx = np.gradient(patch)
    mag = np.sqrt(gx * gx + gy * gy)
    curve = np.zeros(patch.shape[1])
    for row in mag:
        curve += row
    return curve


def smooth_curve(curve: np.ndarray, sg_window: int, sg_order: int) -> np.ndarray:
    """Savitzky-Golay smoothing with mirror padding at both ends."""
    curve = np.asarray(curve, dtype=float)
    L = curve.shape[0]
    if sg_window % 2 == 0 or sg_window < 1:
        raise ParameterError("sg_window must be odd")
    if not 0 <= sg_order < sg_window:
        raise ParameterError("sg_order must be below sg_window")
    if sg_window > L:
        raise ParameterError(f"window {sg_window} longer than curve ({L})")
    coeffs = savgol_coeffs(sg_window, sg_order, use="dot")
    half = sg_window // 2
    padded = np.pad(curve, half, mode="reflect")
    out = np.zeros(L)
    for m in range(sg_window):
        out += coeffs[m] * padded[m:m + L]
    return out


def cut_objective(curve: np.ndarray) -> np.ndarray:
    """Objective value for each cut ``idx = 1..L-1`` (entry ``idx - 1``).

    Class masses and first moments are plain sums over each side, without
    normalisation.  Accumulation order matches the scan kernel: left sums
    grow rightwards, right sums grow from the far end inwards.
    """
    f = [float(v) for v in np.asarray(curve, dtype=float)]
    L = len(f)
    mu_all = 0.0
    for n in range(L):
        mu_all += (n + 1) * f[n]
    w_suf, m_suf = [0.0] * (L + 1), [0.0] * (L + 1)
    for n in range(L - 1, -1, -1):
        w_suf[n] = w_suf[n + 1] + f[n]
        m_suf[n] = m_suf[n + 1] + (n + 1) * f[n]
    out = np.empty(L - 1)
    w_left = mu_left = 0.0
    for idx in range(1, L):
        w_left += f[idx - 1]
        mu_left += idx * f[idx - 1]
        a, b = mu_left - mu_all, m_suf[idx] - mu_all
        out[idx - 1] = w_left * a * a + w_suf[idx] * b * b
    return out


def optimal_cut(curve: np.ndarray) -> int:
    """Cut position splitting the curve into left/right edge classes (1-based)."""
    f = np.asarray(curve, dtype=float)
    if f.size < 2:
        raise ParameterError("curve needs at least two samples")
    if not np.any(f > 0):
        raise NoSignalError("curve carries no gradient energy")
    obj = cut_objective(f)
    best = float(obj.max())
    # smallest idx among the maximisers; values within rounding slack of the
    # maximum count as ties so that exact ties are not lost to rounding
    return int(np.argmax(obj >= best - _kernels.CUT_TIE_RTOL * best)) + 1


def locate_peaks(curve: np.ndarray, idx_optimal: int) -> tuple[int, float, int, float]:
    """Strongest sample on each side of the cut as ``(idx_l, peak_l, idx_r, peak_r)``."""
    f = np.asarray(curve, dtype=float)
    if not 1 <= idx_optimal < f.size:
        raise ParameterError(f"cut {idx_optimal} outside 1..{f.size - 1}")
    il = int(np.argmax(f[:idx_optimal]))
    ir = idx_optimal + int(np.argmax(f[idx_optimal:]))
    return il + 1, float(f[il]), ir + 1, float(f[ir])


def structure_criterion(curve: np.ndarray, params: PredictorParams) -> int:
    """1 when the smoothed projection shows two edges at a plausible spacing.

    ``curve`` is the raw column projection; it is smoothed here and clipped at
    zero, since smoothing can undershoot next to sharp peaks.
    """
    smoothed = np.maximum(smooth_curve(curve, params.sg_window, params.sg_order), 0.0)
    try:
        cut = optimal_cut(smoothed)
    except NoSignalError:
        return 0
    il, pl, ir, pr = locate_peaks(smoothed, cut)
    d_edges = ir - il
    if not params.tau_min <= d_edges <= params.tau_max:
        return 0
    ratio = d_edges / max(pl, pr)
    return int(params.rho_min <= ratio <= params.rho_max)


def weighted_intensity(patch: np.ndarray, sigma: float) -> float:
    """Gaussian-weighted mean of the patch (weights sum to 1).

    Accumulated as deviations from the centre cell so that a constant patch
    returns its value exactly.
    """
    patch = np.asarray(patch, dtype=float)
    L = patch.shape[0]
    w = gaussian_weights(L, sigma)
    centre = float(patch[L // 2, L // 2])
    acc = 0.0
    for wv, pv in zip(w.ravel().tolist(), patch.ravel().tolist()):
        acc += wv * (pv - centre)
    return acc + centre


def intensity_criterion(patch: np.ndarray, params: PredictorParams) -> int:
    d_intensity = weighted_intensity(patch, params.sigma)
    return int(params.delta_min <= d_intensity <= params.delta_max)


def roughness(img: np.ndarray, x: int, y: int, omega: int) -> float:
    """Sum of squared deviations from the centre pixel over the clipped ROI."""
    img = np.asarray(img, dtype=float)
    H, W = img.shape
    roi = img[max(0, y - omega):min(H, y + omega + 1), max(0, x - omega):min(W, x + omega + 1)]
    centre = float(img[y, x])
    acc = 0.0
    for v in roi.ravel().tolist():
        acc += (v - centre) * (v - centre)
    return acc


def smoothness_criterion(img: np.ndarray, x: int, y: int, params: PredictorParams) -> int:
    d = roughness(img, x, y, params.omega)
    return int(params.phi_min <= d <= params.phi_max)


def _weighted_score(r, weights) -> float:
    # ascending-weight summation: permutation invariant to the last bit
    return float(sum(sorted(w for w, hit in zip(weights, r) if hit)))


def predict_pixel(img: np.ndarray, x: int, y: int, params: PredictorParams) -> DirectionResult:
    """Per-direction votes and weighted score for one pixel.

    Intensity and smoothness do not depend on the direction; they are
    evaluated once on the axis-aligned window and shared by all directions.
    """
    img = np.asarray(img, dtype=float)
    L = params.L
    window = sample_rotated_patch(img, x, y, 0.0, L, params.pad_value)
    if not (intensity_criterion(window, params) and smoothness_criterion(img, x, y, params)):
        return DirectionResult(r=(0,) * params.directions, score=0.0)
    r = []
    for theta in params.thetas:
        patch = window if theta == 0.0 else sample_rotated_patch(img, x, y, theta, L, params.pad_value)
        r.append(structure_criterion(gradient_projection(patch), params))
    return DirectionResult(r=tuple(r), score=_weighted_score(r, params.weights))


def _as_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ParameterError(f"expected a single-channel image, got shape {img.shape}")
    return np.ascontiguousarray(img, dtype=np.float64)


def stride_grid(shape: tuple[int, int], stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Column and row coordinates of the scan grid for an image of ``shape``."""
    H, W = shape
    return np.arange(0, W, stride, dtype=np.int64), np.arange(0, H, stride, dtype=np.int64)


def scan_grid(img: np.ndarray, params: PredictorParams, workers: int = 1, region: np.ndarray | None = None):
    """Score every stride-grid pixel.

    Returns ``(xs, ys, scores, best)``: grid coordinates plus ``(len(ys),
    len(xs))`` arrays of scores and best-direction indices (``-1`` if none).
    ``region``, a boolean array of that shape, restricts evaluation to its
    true entries; the rest score 0.  Rows are split into contiguous bands;
    with ``workers > 1`` the bands run on threads (the kernel releases the
    GIL).  Output is independent of ``workers``.
    """
    img = _as_gray(img)
    H, W = img.shape
    L = params.L
    if H < L or W < L:
        raise ParameterError(f"image {W}x{H} smaller than the {L}x{L} patch")
    xs, ys = stride_grid(img.shape, params.stride)
    if region is None:
        active = np.ones((ys.size, xs.size), dtype=np.bool_)
    else:
        active = np.ascontiguousarray(region, dtype=np.bool_)
        if active.shape != (ys.size, xs.size):
            raise ParameterError(f"region shape {active.shape} does not match grid {(ys.size, xs.size)}")
    scores = np.zeros((ys.size, xs.size))
    best = np.full((ys.size, xs.size), -1, dtype=np.int64)
    ox, oy, taps, exact, margin = params.tables
    weights = np.asarray(params.weights, dtype=float)
    order = np.argsort(weights, kind="stable").astype(np.int64)

    def run(lo: int, hi: int) -> None:
        _kernels.scan_rows(
            img, ys[lo:hi], xs, ox, oy, taps, exact, margin, params.gaussian,
            params.sg_coefficients, weights, order, float(params.pad_value),
            float(params.tau_min), float(params.tau_max),
            float(params.rho_min), float(params.rho_max),
            float(params.delta_min), float(params.delta_max),
            int(params.omega), float(params.phi_min), float(params.phi_max),
            active[lo:hi], scores[lo:hi], best[lo:hi],
        )

    workers = max(1, int(workers))
    if workers == 1:
        run(0, ys.size)
    else:
        bounds = np.linspace(0, ys.size, workers + 1).astype(int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, bounds[:-1], bounds[1:]))
    return xs, ys, scores, best


def scan_image(img: np.ndarray, params: PredictorParams, workers: int = 1,
               region: np.ndarray | None = None) -> list[CandidatePoint]:
    """Candidates (score > 0) on the stride grid, in row-major order."""
    xs, ys, scores, best = scan_grid(img, params, workers, region)
    thetas = params.thetas
    rows, cols = np.nonzero(scores > 0)
    return [
        CandidatePoint(y=int(ys[a]), x=int(xs[b]), score=float(scores[a, b]),
                       best_theta=float(thetas[best[a, b]]))
        for a, b in zip(rows, cols)
    ]
