"""Synthetic in-cabin frames with exact ground truth.

A scene is a belt ribbon whose centreline is a polynomial in the ellipse
frame of two image-space anchors, drawn over a flat, gradient or
value-noise background.  Optional rectangular occluders, a radial barrel
warp ``r -> r (1 + kappa r^2)`` (``r`` normalised by the half-diagonal),
Gaussian blur and additive Gaussian noise are applied in that order.
Intensities are 8-bit levels throughout.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import cv2
import numpy as np
import yaml
from numpy.polynomial import polynomial as P

from .assembler import SeatConfig
from .errors import SceneError
from .geometry import CameraModel, back_project, build_ellipse_frame, image_to_local, local_to_image
from .usage import Usage, median_angle

BACKGROUNDS = ("flat", "gradient", "perlin")

# Detector settings tuned on corpora from :func:`balanced_corpus`; written
# into the config that accompanies every rendered corpus.
CORPUS_PREDICTOR = {"rho_min": 0.005, "rho_max": 0.055, "omega": 1, "phi_max": 6000.0}
CORPUS_MSAC = {"inlier_tol": 8.0, "min_coverage": 0.9}
CORPUS_SEAT = {"gamma_pre": 0.5}
_SUPERSAMPLE = 4
_GT_SAMPLES = 400


@dataclass(frozen=True)
class Occluder:
    """Axis-aligned rectangle in output image coordinates (inclusive pixels)."""

    x0: int
    y0: int
    x1: int
    y1: int
    intensity: float = 170.0


@dataclass(frozen=True)
class SceneSpec:
    width: int = 640
    height: int = 480
    anchor_tr: tuple[float, float] = (470.0, 140.0)
    anchor_bl: tuple[float, float] = (180.0, 400.0)
    coeffs: tuple[float, ...] | None = (0.0,)
    label: str = "ON"
    belt_width: float = 8.0
    belt_intensity: float = 80.0
    background: str = "flat"
    background_level: float = 130.0
    background_amplitude: float = 0.0
    noise_sigma: float = 0.0
    blur: int = 0
    occluders: tuple[Occluder, ...] = ()
    warp_kappa: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.coeffs is not None and self.belt_width < 3:
            raise SceneError("belt width must be at least 3 px")
        if self.background not in BACKGROUNDS:
            raise SceneError(f"unknown background {self.background!r}")
        if self.blur not in (0, 1) and (self.blur < 0 or self.blur % 2 == 0):
            raise SceneError("blur kernel size must be odd")
        if self.noise_sigma < 0:
            raise SceneError("noise sigma must be >= 0")
        if self.label not in {u.value for u in Usage}:
            raise SceneError(f"unknown label {self.label!r}")

    @property
    def frame(self):
        return build_ellipse_frame(self.anchor_tr, self.anchor_bl, d_minor=1.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["occluders"] = [asdict(o) for o in self.occluders]
        d["coeffs"] = None if self.coeffs is None else list(self.coeffs)
        d["anchor_tr"], d["anchor_bl"] = list(self.anchor_tr), list(self.anchor_bl)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SceneSpec":
        data = dict(data)
        data["occluders"] = tuple(Occluder(**o) for o in data.get("occluders", ()))
        if data.get("coeffs") is not None:
            data["coeffs"] = tuple(float(c) for c in data["coeffs"])
        for key in ("anchor_tr", "anchor_bl"):
            if key in data:
                data[key] = tuple(float(v) for v in data[key])
        return cls(**data)


@dataclass
class GroundTruth:
    label: str
    centerline: np.ndarray                 # (n, 2) image points, after warp
    occluded: np.ndarray                   # (n,) bool, centreline point under an occluder
    anchors: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))  # warped tr, bl

    @property
    def occluded_fraction(self) -> float:
        return float(self.occluded.mean()) if self.occluded.size else 0.0


# ---------------------------------------------------------------------------
# warp
# ---------------------------------------------------------------------------

def _warp_norm(width: int, height: int) -> tuple[np.ndarray, float]:
    centre = np.array([(width - 1) / 2.0, (height - 1) / 2.0])
    return centre, math.hypot(width / 2.0, height / 2.0)


def warp_points(points, kappa: float, width: int, height: int) -> np.ndarray:
    """Forward barrel warp of undistorted image points."""
    pts = np.asarray(points, dtype=float)
    if kappa == 0.0:
        return pts.copy()
    centre, norm = _warp_norm(width, height)
    d = pts - centre
    r2 = np.sum(d * d, axis=-1, keepdims=True) / norm**2
    return centre + d * (1.0 + kappa * r2)


def unwarp_points(points, kappa: float, width: int, height: int, iterations: int = 8) -> np.ndarray:
    """Inverse of :func:`warp_points` by Newton iteration on the radius."""
    pts = np.asarray(points, dtype=float)
    if kappa == 0.0:
        return pts.copy()
    centre, norm = _warp_norm(width, height)
    d = pts - centre
    rd = np.sqrt(np.sum(d * d, axis=-1)) / norm
    ru = rd.copy()
    for _ in range(iterations):
        f = ru * (1.0 + kappa * ru**2) - rd
        ru = ru - f / (1.0 + 3.0 * kappa * ru**2)
    scale = np.where(rd > 0, ru / np.where(rd > 0, rd, 1.0), 1.0)
    return centre + d * scale[..., None]


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def _background(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    H, W = spec.height, spec.width
    base = np.full((H, W), float(spec.background_level))
    amp = float(spec.background_amplitude)
    if spec.background == "gradient":
        ang = rng.uniform(0, 2 * np.pi)
        yy, xx = np.mgrid[0:H, 0:W].astype(float)
        ramp = (np.cos(ang) * (xx / W - 0.5) + np.sin(ang) * (yy / H - 0.5))
        base += amp * ramp / max(np.abs(ramp).max(), 1e-9) / 2.0
    elif spec.background == "perlin":
        tex = np.zeros((H, W))
        for cells, weight in ((6, 1.0), (14, 0.5), (30, 0.25)):
            grid = rng.uniform(-1, 1, (cells * H // W + 2, cells + 2)).astype(np.float32)
            tex += weight * cv2.resize(grid, (W, H), interpolation=cv2.INTER_CUBIC)
        base += amp * tex / max(np.abs(tex).max(), 1e-9) / 2.0
    return base


def _belt_distance(spec: SceneSpec, pts_out: np.ndarray):
    """Normal-distance proxy to the centreline and in-span flag for output points."""
    pts = unwarp_points(pts_out, spec.warp_kappa, spec.width, spec.height)
    frame = spec.frame
    local = image_to_local(frame, pts)
    c = np.asarray(spec.coeffs, dtype=float)
    xl, yl = local[..., 0], local[..., 1]
    slope = P.polyval(xl, P.polyder(c)) if c.size > 1 else np.zeros_like(xl)
    dist = (yl - P.polyval(xl, c)) / np.sqrt(1.0 + slope**2)
    half = frame.d_major / 2.0
    return dist, (xl >= -half) & (xl <= half), xl


def _belt_coverage(spec: SceneSpec) -> np.ndarray:
    H, W = spec.height, spec.width
    yy, xx = np.mgrid[0:H, 0:W].astype(float)
    centres = np.stack([xx, yy], axis=-1)
    dist, span, xl = _belt_distance(spec, centres)
    half_w = spec.belt_width / 2.0
    cover = ((np.abs(dist) <= half_w) & span).astype(float)
    half = spec.frame.d_major / 2.0
    band = (np.abs(np.abs(dist) - half_w) < 1.5) | ((np.abs(np.abs(xl) - half) < 1.5) & (np.abs(dist) < half_w + 1.5))
    rows, cols = np.nonzero(band)
    if rows.size:
        s = _SUPERSAMPLE
        off = (np.arange(s) + 0.5) / s - 0.5
        oy, ox = np.meshgrid(off, off, indexing="ij")
        sub = np.stack([cols[:, None] + ox.ravel()[None, :], rows[:, None] + oy.ravel()[None, :]], axis=-1)
        d_sub, span_sub, _ = _belt_distance(spec, sub)
        cover[rows, cols] = np.mean((np.abs(d_sub) <= half_w) & span_sub, axis=1)
    return cover


def ground_truth_centerline(spec: SceneSpec, count: int = _GT_SAMPLES) -> np.ndarray:
    if spec.coeffs is None:
        return np.empty((0, 2))
    frame = spec.frame
    half = frame.d_major / 2.0
    xs = np.linspace(-half, half, count)
    pts = local_to_image(frame, np.stack([xs, P.polyval(xs, np.asarray(spec.coeffs))], axis=-1))
    return warp_points(pts, spec.warp_kappa, spec.width, spec.height)


def _check_geometry(spec: SceneSpec, centerline: np.ndarray) -> None:
    margin = spec.belt_width / 2.0
    if centerline.size and (
        centerline[:, 0].min() - margin < 0 or centerline[:, 0].max() + margin > spec.width - 1
        or centerline[:, 1].min() - margin < 0 or centerline[:, 1].max() + margin > spec.height - 1
    ):
        raise SceneError("belt leaves the image")
    for o in spec.occluders:
        if not (0 <= o.x0 <= o.x1 < spec.width and 0 <= o.y0 <= o.y1 < spec.height):
            raise SceneError(f"occluder {o} outside the image")


def render_clean(spec: SceneSpec) -> tuple[np.ndarray, GroundTruth]:
    """Noise-free, unblurred float rendering plus ground truth."""
    rng = np.random.default_rng(spec.seed)
    centerline = ground_truth_centerline(spec)
    _check_geometry(spec, centerline)
    img = _background(spec, rng)
    if spec.coeffs is not None:
        cover = _belt_coverage(spec)
        img = img * (1.0 - cover) + spec.belt_intensity * cover
    occluded = np.zeros(len(centerline), dtype=bool)
    for o in spec.occluders:
        patch = o.intensity + rng.normal(0.0, 3.0, (o.y1 - o.y0 + 1, o.x1 - o.x0 + 1))
        img[o.y0:o.y1 + 1, o.x0:o.x1 + 1] = cv2.GaussianBlur(patch, (5, 5), 0)
        if centerline.size:
            occluded |= ((centerline[:, 0] >= o.x0 - 0.5) & (centerline[:, 0] <= o.x1 + 0.5)
                         & (centerline[:, 1] >= o.y0 - 0.5) & (centerline[:, 1] <= o.y1 + 0.5))
    anchors = warp_points(np.array([spec.anchor_tr, spec.anchor_bl], dtype=float),
                          spec.warp_kappa, spec.width, spec.height)
    return img, GroundTruth(spec.label, centerline, occluded, anchors)


def render(spec: SceneSpec) -> tuple[np.ndarray, GroundTruth]:
    """8-bit grayscale frame and its ground truth; deterministic in ``spec.seed``."""
    img, gt = render_clean(spec)
    if spec.blur > 1:
        img = cv2.GaussianBlur(img, (spec.blur, spec.blur), 0)
    if spec.noise_sigma > 0:
        # separate stream so the noise level never perturbs scene content
        noise_rng = np.random.default_rng([spec.seed, 1])
        img = img + noise_rng.normal(0.0, spec.noise_sigma, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), gt


# ---------------------------------------------------------------------------
# corpus
# ---------------------------------------------------------------------------

def default_camera() -> CameraModel:
    """Cabin camera looking slightly downwards at the seat."""
    pitch = math.radians(12.0)
    c, s = math.cos(pitch), math.sin(pitch)
    R = (1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
    return CameraModel(fx=520.0, fy=520.0, cx=319.5, cy=239.5, R=R, T=(40.0, 150.0, 300.0))


def seat_for_scene(cam: CameraModel, spec: SceneSpec, depth: float = 900.0, **kwargs) -> SeatConfig:
    """Seat whose anchors project exactly onto the scene's anchor pixels."""
    return SeatConfig(
        anchor_tr=back_project(cam, *spec.anchor_tr, depth),
        anchor_bl=back_project(cam, *spec.anchor_bl, depth * 1.1),
        **kwargs,
    )


def _belt_shape(label: str, rng: np.random.Generator, d_major: float) -> tuple[float, ...] | None:
    """Centreline coefficients; ON hugs the anchor line, UNDER sags far below it."""
    if label == Usage.OFF.value:
        return None
    half = d_major / 2.0
    if label == Usage.ON.value:
        amp = rng.uniform(-18.0, 18.0)
        skew = rng.uniform(-6.0, 6.0)
    else:
        amp = rng.uniform(55.0, 72.0)
        skew = rng.uniform(-12.0, 4.0)
    # amp * (1 - s^2) + skew * s * (1 - s^2), s = x / half: zero at both anchors
    return (float(amp), float(skew / half), float(-amp / half**2), float(-skew / half**3))


def _mid_occluder(spec: SceneSpec, fraction: float, rng: np.random.Generator, centred: bool) -> Occluder:
    """Rectangle hiding roughly ``fraction`` of the centreline, never more."""
    line = ground_truth_centerline(spec)
    n = len(line)
    span = max(2, int(round(fraction * n)))
    lo = (n - span) // 2 if centred else int(rng.integers(int(0.15 * n), int(0.85 * n) - span))
    intensity = float(rng.uniform(150, 200))
    while span > 1:
        seg = line[lo:lo + span]
        x0, y0 = np.floor(seg.min(axis=0)).astype(int)
        x1, y1 = np.ceil(seg.max(axis=0)).astype(int)
        pad = int(math.ceil(spec.belt_width))
        occ = Occluder(int(max(0, x0 - pad // 2)), int(max(0, y0 - pad // 2)),
                       int(min(spec.width - 1, x1 + pad // 2)), int(min(spec.height - 1, y1 + pad // 2)),
                       intensity)
        inside = ((line[:, 0] >= occ.x0 - 0.5) & (line[:, 0] <= occ.x1 + 0.5)
                  & (line[:, 1] >= occ.y0 - 0.5) & (line[:, 1] <= occ.y1 + 0.5))
        if inside.mean() <= fraction + 1e-12:
            return occ
        span -= max(1, span // 20)
        lo = (n - span) // 2 if centred else lo
    raise SceneError("could not place occluder")


def random_scene(label: str, seed: int, *, occlusion: float | None = None, centred_occluder: bool = False,
                 warp: bool | None = None, noise_max: float = 10.0, blur_choices=(0, 3, 5),
                 base: SceneSpec = SceneSpec()) -> SceneSpec:
    """Randomised scene within the acceptance-corpus envelope."""
    rng = np.random.default_rng(seed)
    d_major = base.frame.d_major
    level = float(rng.uniform(110.0, 150.0))
    contrast = float(rng.uniform(45.0, 65.0)) * (1 if rng.random() < 0.3 else -1)
    warp = bool(rng.random() < 0.5) if warp is None else warp
    spec = replace(
        base,
        coeffs=_belt_shape(label, rng, d_major),
        label=label,
        belt_width=float(rng.uniform(6.0, 10.0)),
        belt_intensity=float(np.clip(level + contrast, 40.0, 200.0)),
        background=str(rng.choice(BACKGROUNDS)),
        background_level=level,
        background_amplitude=float(rng.uniform(0.0, 30.0)),
        noise_sigma=float(rng.uniform(0.0, noise_max)),
        blur=int(rng.choice(blur_choices)),
        warp_kappa=float(rng.uniform(-0.08, -0.02)) if warp else 0.0,
        seed=int(seed),
    )
    if occlusion is None and rng.random() < 0.3:
        occlusion = float(rng.uniform(0.1, 0.25))
    if occlusion and spec.coeffs is not None:
        spec = replace(spec, occluders=(_mid_occluder(spec, occlusion, rng, centred_occluder),))
    elif occlusion:
        # OFF scenes still get a hand-sized distractor
        x0 = int(rng.integers(150, 400))
        y0 = int(rng.integers(150, 330))
        spec = replace(spec, occluders=(Occluder(x0, y0, x0 + 70, y0 + 60, float(rng.uniform(150, 200))),))
    return spec


def scene_median_angle(spec: SceneSpec, count: int = 32) -> float | None:
    """Median anchor angle of the undistorted ground-truth curve."""
    if spec.coeffs is None:
        return None
    frame = spec.frame
    half = frame.d_major / 2.0
    xs = np.linspace(-half, half, count)
    pts = local_to_image(frame, np.stack([xs, P.polyval(xs, np.asarray(spec.coeffs))], axis=-1))
    return median_angle(pts, spec.anchor_bl)


def write_corpus(out_dir: str | Path, scenes: list[SceneSpec], cam: CameraModel | None = None,
                 seat_kwargs: dict | None = None) -> Path:
    """Render scenes into ``out_dir`` with ``manifest.json``, ``calibration.yaml`` and ``config.yaml``.

    All scenes must share image size and anchors, since one seat config
    serves the whole corpus.
    """
    from .config import write_config
    from .geometry import save_calibration
    from .predictor import PredictorParams
    from .shape import MsacParams

    if len({(s.width, s.height, s.anchor_tr, s.anchor_bl) for s in scenes}) > 1:
        raise SceneError("corpus scenes must share image size and anchors")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cam = cam or default_camera()
    entries = []
    for i, spec in enumerate(scenes):
        img, gt = render(spec)
        name = f"frame_{i:04d}.png"
        if not cv2.imwrite(str(out / name), img):
            raise OSError(f"failed to write {out / name}")
        entries.append({
            "image": name,
            "label": gt.label,
            "centerline": np.round(gt.centerline, 4).tolist(),
            "occluded": gt.occluded.astype(int).tolist(),
            "scene": spec.to_dict(),
        })
    (out / "manifest.json").write_text(json.dumps({"version": 1, "entries": entries}))
    if scenes:
        save_calibration(cam, out / "calibration.yaml")
        seat = seat_for_scene(cam, scenes[0], name="driver", **{**CORPUS_SEAT, **(seat_kwargs or {})})
        write_config(out / "config.yaml", calibration="calibration.yaml", seats=[seat],
                     predictor=PredictorParams(**CORPUS_PREDICTOR), msac=MsacParams(**CORPUS_MSAC))
    return out / "manifest.json"


def balanced_corpus(count: int, seed: int = 0, **kwargs) -> list[SceneSpec]:
    labels = [Usage.ON.value, Usage.UNDER.value, Usage.OFF.value]
    return [random_scene(labels[i % 3], seed * 100_003 + i, **kwargs) for i in range(count)]


def load_scene_specs(path: str | Path) -> list[SceneSpec]:
    """Read one scene or a list of scenes from a YAML/JSON file."""
    data = yaml.safe_load(Path(path).read_text())
    if isinstance(data, dict) and "scenes" in data:
        data = data["scenes"]
    if isinstance(data, dict):
        data = [data]
    return [SceneSpec.from_dict(d) for d in data]
