"""Frame processing, batch detection and corpus evaluation."""

from __future__ import annotations

import json
import logging
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, TextIO

import cv2
import numpy as np

from .assembler import LocationMask, anchor_points, build_mask, filter_candidates
from .config import PipelineConfig
from .errors import ManifestError
from .predictor import scan_image, stride_grid
from .shape import BeltCurve, model_shape, sample_curve
from .usage import Usage, UsageResult, classify

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".pgm", ".ppm", ".tif", ".tiff")
LABELS = tuple(u.value for u in Usage)
OVERLAY_SAMPLES = 64
RMSE_SAMPLES = 64


@dataclass
class SeatResult:
    seat: str
    usage: UsageResult
    curve: BeltCurve | None
    candidates_before: int
    candidates_after: int

    def to_dict(self) -> dict:
        return {
            "seat": self.seat,
            "usage": self.usage.to_dict(),
            "curve": self.curve.to_dict() if self.curve is not None else None,
            "candidates_before": self.candidates_before,
            "candidates_after": self.candidates_after,
        }


@dataclass
class FrameResult:
    frame: str
    seats: list[SeatResult] = field(default_factory=list)
    error: str | None = None
    timing_ms: dict = field(default_factory=dict)

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {"frame": self.frame, "seats": [s.to_dict() for s in self.seats]}
        if self.error is not None:
            d["error"] = self.error
        if include_timing:
            d["timing_ms"] = self.timing_ms
        return d

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), sort_keys=True, separators=(",", ":"))


def to_gray(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] == 1:
        return img[:, :, 0]
    if img.ndim == 3 and img.shape[2] == 3:
        return cv2.cvtColor(img, cv2.COLOR_BGR2GRAY)
    if img.ndim == 3 and img.shape[2] == 4:
        return cv2.cvtColor(img, cv2.COLOR_BGRA2GRAY)
    raise ValueError(f"unsupported image shape {img.shape}")


def load_gray(path: str | Path) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise OSError(f"cannot read image {path}")
    return to_gray(img)


class Detector:
    """Per-seat masks and scan region for one configuration, reused across frames."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.masks: list[LocationMask] = [build_mask(cfg.camera, s) for s in cfg.seats]
        self.bl_anchors = [anchor_points(cfg.camera, s)[1] for s in cfg.seats]
        self._regions: dict[tuple[int, int], np.ndarray | None] = {}

    def region(self, shape: tuple[int, int]) -> np.ndarray | None:
        """Grid points inside any seat mask; ``None`` scans the whole frame."""
        if self.cfg.scan_region == "full":
            return None
        if shape not in self._regions:
            xs, ys = stride_grid(shape, self.cfg.predictor.stride)
            gx, gy = np.meshgrid(xs, ys)
            pts = np.stack([gx.ravel(), gy.ravel()], axis=-1).astype(float)
            inside = np.zeros(len(pts), dtype=bool)
            for m in self.masks:
                inside |= m.membership(pts)
            self._regions[shape] = inside.reshape(ys.size, xs.size)
        return self._regions[shape]

    def process(self, img: np.ndarray, frame: str = "") -> FrameResult:
        cfg = self.cfg
        t0 = time.perf_counter()
        cands = scan_image(img, cfg.predictor, region=self.region(img.shape[:2]))
        timing = {"scan": (time.perf_counter() - t0) * 1e3, "seats": {}}
        result = FrameResult(frame=frame, timing_ms=timing)
        for seat, mask, bl in zip(cfg.seats, self.masks, self.bl_anchors):
            t1 = time.perf_counter()
            kept = filter_candidates(cands, mask, seat.gamma_pre)
            t2 = time.perf_counter()
            curve = model_shape(kept, mask.frame, cfg.poly_order, cfg.msac)
            t3 = time.perf_counter()
            usage = classify(curve, seat, bl)
            t4 = time.perf_counter()
            timing["seats"][seat.name] = {"filter": (t2 - t1) * 1e3, "shape": (t3 - t2) * 1e3,
                                          "classify": (t4 - t3) * 1e3}
            result.seats.append(SeatResult(seat.name, usage, curve, len(cands), len(kept)))
        timing["total"] = (time.perf_counter() - t0) * 1e3
        return result


def render_overlay(img: np.ndarray, result: FrameResult) -> np.ndarray:
    """Colour copy of ``img`` with each fitted curve in green and its label in red above it.

    Seats without a curve get their label in the top-left corner instead.
    """
    vis = cv2.cvtColor(np.clip(img, 0, 255).astype(np.uint8), cv2.COLOR_GRAY2BGR)
    for i, seat in enumerate(result.seats):
        if seat.curve is None:
            cv2.putText(vis, f"{seat.seat}: {seat.usage.label.value}", (10, 25 + 22 * i), cv2.FONT_HERSHEY_SIMPLEX,
                        0.6, (0, 0, 255), 2, cv2.LINE_AA)
            continue
        pts = sample_curve(seat.curve, OVERLAY_SAMPLES)
        cv2.polylines(vis, [np.round(pts).astype(np.int32)], False, (0, 255, 0), 2, cv2.LINE_AA)
        top = pts[np.argmin(pts[:, 1])]
        org = (int(round(top[0])) - 20, max(15, int(round(top[1])) - 12))
        cv2.putText(vis, seat.usage.label.value, org, cv2.FONT_HERSHEY_SIMPLEX, 0.6, (0, 0, 255), 2, cv2.LINE_AA)
    return vis


def overlay_name(frame: str) -> str:
    return Path(frame.replace("/", "__")).with_suffix(".png").name


def list_inputs(path: str | Path) -> list[tuple[Path, str]]:
    """``(path, frame_id)`` pairs sorted by path; frame ids are relative to a directory input."""
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.rglob("*") if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
        return [(p, p.relative_to(path).as_posix()) for p in files]
    if path.exists():
        return [(path, path.name)]
    raise FileNotFoundError(f"input not found: {path}")


# ---------------------------------------------------------------------------
# worker plumbing: one Detector per process
# ---------------------------------------------------------------------------

_WORKER: dict = {}


def _init_worker(cfg: PipelineConfig, overlay_dir: str | None) -> None:
    _WORKER["detector"] = Detector(cfg)
    _WORKER["overlay_dir"] = overlay_dir


def _process_path(item: tuple[str, str]) -> FrameResult:
    path, frame = item
    det: Detector = _WORKER["detector"]
    t0 = time.perf_counter()
    try:
        img = load_gray(path)
    except (OSError, ValueError) as exc:
        return FrameResult(frame=frame, error=str(exc))
    result = det.process(img, frame)
    result.timing_ms["load"] = (time.perf_counter() - t0) * 1e3 - result.timing_ms["total"]
    if _WORKER["overlay_dir"]:
        out = Path(_WORKER["overlay_dir"]) / overlay_name(frame)
        if not cv2.imwrite(str(out), render_overlay(img, result)):
            logger.warning("failed to write overlay %s", out)
    return result


def warm_up() -> None:
    """Compile the scan kernels once so forked workers inherit them."""
    from .predictor import PredictorParams

    scan_image(np.zeros((16, 16)), PredictorParams(k=3, stride=4))


def process_paths(cfg: PipelineConfig, items: Iterable[tuple[str | Path, str]], jobs: int = 1,
                  overlay_dir: str | Path | None = None) -> Iterator[FrameResult]:
    """Results in input order; frames spread over ``jobs`` processes."""
    items = [(str(p), f) for p, f in items]
    overlay = str(overlay_dir) if overlay_dir else None
    if overlay:
        Path(overlay).mkdir(parents=True, exist_ok=True)
    warm_up()
    if jobs <= 1 or len(items) <= 1:
        _init_worker(cfg, overlay)
        for item in items:
            yield _process_path(item)
        return
    ctx = multiprocessing.get_context("fork") if "fork" in multiprocessing.get_all_start_methods() else None
    with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx, initializer=_init_worker,
                             initargs=(cfg, overlay)) as pool:
        yield from pool.map(_process_path, items, chunksize=1)


def run_detect(cfg: PipelineConfig, inputs: str | Path, out: TextIO | None = None, jobs: int = 1,
               overlay_dir: str | Path | None = None, include_timing: bool = False) -> list[FrameResult]:
    """Detect on every input image, writing one JSON line per frame to ``out``."""
    results = []
    for result in process_paths(cfg, list_inputs(inputs), jobs, overlay_dir):
        if out is not None:
            out.write(result.to_json(include_timing) + "\n")
            out.flush()
        results.append(result)
    return results


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def polyline_distance(points, polyline) -> np.ndarray:
    """Euclidean distance from each point to the nearest segment of ``polyline``."""
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    line = np.asarray(polyline, dtype=float).reshape(-1, 2)
    if line.shape[0] == 1:
        return np.linalg.norm(p - line[0], axis=1)
    a, b = line[:-1], line[1:]
    ab = b - a
    len2 = np.maximum(np.sum(ab * ab, axis=1), 1e-300)
    out = np.empty(len(p))
    for lo in range(0, len(p), 256):
        q = p[lo:lo + 256, None, :]
        t = np.clip(np.sum((q - a) * ab, axis=-1) / len2, 0.0, 1.0)
        proj = a + t[..., None] * ab
        out[lo:lo + 256] = np.sqrt(np.min(np.sum((q - proj) ** 2, axis=-1), axis=1))
    return out


def curve_rmse(curve: BeltCurve, centerline) -> float:
    """RMS distance from the fitted curve, sampled across the anchor span, to the true centreline."""
    d = polyline_distance(sample_curve(curve, RMSE_SAMPLES), centerline)
    return float(np.sqrt(np.mean(d * d)))


def occluded_rmse(curve: BeltCurve, centerline, occluded) -> float | None:
    """RMS distance from the hidden centreline points to the fitted curve."""
    pts = np.asarray(centerline, dtype=float)[np.asarray(occluded, dtype=bool)]
    if pts.size == 0:
        return None
    d = polyline_distance(pts, sample_curve(curve, 4 * RMSE_SAMPLES))
    return float(np.sqrt(np.mean(d * d)))


@dataclass
class EvalReport:
    frames: int = 0
    confusion: dict = field(default_factory=lambda: {t: {p: 0 for p in LABELS} for t in LABELS})
    accuracy: dict = field(default_factory=dict)
    rmse: list = field(default_factory=list)
    occluded_rmse: list = field(default_factory=list)
    latency_ms: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    records: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def summary(self) -> dict:
        def stats(v):
            if not v:
                return {"count": 0, "mean": None, "p95": None, "max": None}
            a = np.asarray(v, dtype=float)
            return {"count": int(a.size), "mean": float(a.mean()), "p95": float(np.percentile(a, 95)),
                    "max": float(a.max())}
        return {
            "frames": self.frames,
            "confusion": self.confusion,
            "accuracy": self.accuracy,
            "rmse": stats(self.rmse),
            "occluded_rmse": stats(self.occluded_rmse),
            "latency_ms": stats(self.latency_ms),
            "passed": self.passed,
            "failures": self.failures,
        }


def load_manifest(path: str | Path) -> tuple[Path, list[dict]]:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"invalid manifest {path}: {exc}") from exc
    entries = data.get("entries") if isinstance(data, dict) else None
    if not isinstance(entries, list):
        raise ManifestError(f"{path}: missing entries list")
    for i, e in enumerate(entries):
        if not isinstance(e, dict) or "image" not in e or e.get("label") not in LABELS:
            raise ManifestError(f"{path}: entry {i} needs an image and a label in {LABELS}")
        if not (path.parent / e["image"]).is_file():
            raise ManifestError(f"{path}: image {e['image']} listed but missing")
    return path.parent, entries


def run_eval(cfg: PipelineConfig, manifest: str | Path, jobs: int = 1) -> EvalReport:
    """Score the first configured seat against a synthetic corpus manifest."""
    root, entries = load_manifest(manifest)
    report = EvalReport(frames=len(entries))
    items = [(root / e["image"], e["image"]) for e in entries]
    for entry, result in zip(entries, process_paths(cfg, items, jobs)):
        if result.error is not None:
            raise ManifestError(f"{entry['image']}: {result.error}")
        seat = result.seats[0]
        truth, pred = entry["label"], seat.usage.label.value
        report.confusion[truth][pred] += 1
        report.latency_ms.append(result.timing_ms["total"])
        rec = {"image": entry["image"], "truth": truth, "pred": pred}
        if seat.curve is not None and truth == pred and truth != Usage.OFF.value:
            line = np.asarray(entry["centerline"], dtype=float)
            rec["rmse"] = curve_rmse(seat.curve, line)
            report.rmse.append(rec["rmse"])
            occ = occluded_rmse(seat.curve, line, entry.get("occluded", []))
            if occ is not None:
                rec["occluded_rmse"] = occ
                report.occluded_rmse.append(occ)
        report.records.append(rec)
    for t in LABELS:
        n = sum(report.confusion[t].values())
        report.accuracy[t] = report.confusion[t][t] / n if n else None
    _apply_floors(cfg, report)
    return report


def _apply_floors(cfg: PipelineConfig, report: EvalReport) -> None:
    f = cfg.floors
    if report.frames == 0:
        return
    if f.min_accuracy is not None:
        for t, acc in report.accuracy.items():
            if acc is not None and acc < f.min_accuracy:
                report.failures.append(f"accuracy[{t}] {acc:.3f} < {f.min_accuracy}")
    s = report.summary()
    if f.max_mean_rmse is not None and s["rmse"]["count"] and s["rmse"]["mean"] > f.max_mean_rmse:
        report.failures.append(f"mean rmse {s['rmse']['mean']:.3f} > {f.max_mean_rmse}")
    if f.max_p95_rmse is not None and s["rmse"]["count"] and s["rmse"]["p95"] > f.max_p95_rmse:
        report.failures.append(f"p95 rmse {s['rmse']['p95']:.3f} > {f.max_p95_rmse}")
    if f.max_latency_ms is not None and s["latency_ms"]["count"] and s["latency_ms"]["mean"] > f.max_latency_ms:
        report.failures.append(f"mean latency {s['latency_ms']['mean']:.1f} ms > {f.max_latency_ms}")
