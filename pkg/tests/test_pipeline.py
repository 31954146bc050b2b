from __future__ import annotations

import io
import json
from dataclasses import replace
from pathlib import Path

import cv2
import numpy as np
import pytest

from conftest import clean_scenes, corpus_config
from seatbelt.assembler import SeatConfig
from seatbelt.config import EvalFloors, load_config
from seatbelt.errors import ManifestError
from seatbelt.geometry import back_project
from seatbelt.pipeline import (
    Detector,
    curve_rmse,
    list_inputs,
    load_manifest,
    occluded_rmse,
    overlay_name,
    polyline_distance,
    render_overlay,
    run_detect,
    run_eval,
    to_gray,
)
from seatbelt.shape import BeltCurve
from seatbelt.synth import SceneSpec, render


def dense_distance(p, polyline, per_segment=2000) -> float:
    """Distance to a finely resampled polyline; accurate to well under 1e-3 px here."""
    line = np.asarray(polyline, dtype=float)
    t = np.linspace(0, 1, per_segment)[:, None]
    pts = np.concatenate([a + t * (b - a) for a, b in zip(line[:-1], line[1:])])
    return float(np.min(np.hypot(*(pts - p).T)))


class TestPolylineDistance:
    def test_simple_cases(self):
        line = [(0, 0), (10, 0), (10, 10)]
        got = polyline_distance([(5, 3), (-4, -3), (13, 5), (12, 12)], line)
        assert got == pytest.approx([3, 5, 3, np.hypot(2, 2)])

    def test_single_point_polyline(self):
        assert polyline_distance([(3, 4)], [(0, 0)]) == pytest.approx([5])

    def test_matches_dense_sampling(self, rng):
        line = np.cumsum(rng.normal(0, 20, (12, 2)), axis=0)
        pts = rng.uniform(line.min(0) - 20, line.max(0) + 20, (300, 2))
        got = polyline_distance(pts, line)
        expected = [dense_distance(p, line) for p in pts]
        assert np.max(np.abs(got - expected)) <= 1e-2


class TestRmse:
    def test_exact_curve_has_zero_error(self):
        spec = SceneSpec(coeffs=(20.0, 0.0, -20.0 / 171.0**2))
        curve = BeltCurve(spec.coeffs, 2, 100, 1.0, 0.0, spec.frame)
        _, gt = render(spec)
        assert curve_rmse(curve, gt.centerline) <= 1e-3

    def test_offset_curve(self):
        spec = SceneSpec(coeffs=(0.0,))
        _, gt = render(spec)
        curve = BeltCurve((3.0,), 0, 100, 1.0, 0.0, spec.frame)
        assert curve_rmse(curve, gt.centerline) == pytest.approx(3.0, abs=1e-6)
        hidden = np.zeros(len(gt.centerline), dtype=bool)
        assert occluded_rmse(curve, gt.centerline, hidden) is None
        hidden[100:150] = True
        assert occluded_rmse(curve, gt.centerline, hidden) == pytest.approx(3.0, abs=1e-6)


class TestDetector:
    def test_blank_frame_is_off(self):
        det = Detector(corpus_config(SceneSpec()))
        res = det.process(np.full((480, 640), 130, np.uint8), "blank")
        (seat,) = res.seats
        assert seat.usage.label.value == "OFF" and seat.curve is None
        assert seat.candidates_before == 0 and seat.candidates_after == 0

    def test_clean_frames_are_classified_correctly(self):
        scenes = clean_scenes(12, seed=1)
        det = Detector(corpus_config(scenes[0]))
        errors = []
        for spec in scenes:
            img, gt = render(spec)
            seat = det.process(img).seats[0]
            assert seat.usage.label.value == spec.label
            if spec.coeffs is not None:
                errors.append(curve_rmse(seat.curve, gt.centerline))
                assert seat.candidates_after <= seat.candidates_before
        assert max(errors) <= 4.0 and np.mean(errors) <= 2.0

    def test_scan_region_full_sees_at_least_as_much(self):
        spec = clean_scenes(1, seed=3)[0]
        img, _ = render(spec)
        cfg = corpus_config(spec)
        masked = Detector(cfg).process(img).seats[0]
        full = Detector(replace(cfg, scan_region="full")).process(img).seats[0]
        assert full.candidates_before >= masked.candidates_before
        assert full.candidates_after == masked.candidates_after

    def test_two_seats(self):
        spec = clean_scenes(1, seed=5)[0]
        img, _ = render(spec)
        cfg = corpus_config(spec)
        cam = cfg.camera
        other = SeatConfig(back_project(cam, 600, 60, 900), back_project(cam, 520, 200, 900), name="passenger")
        res = Detector(replace(cfg, seats=(cfg.seats[0], other))).process(img)
        assert [s.seat for s in res.seats] == ["driver", "passenger"]
        assert res.seats[0].usage.label.value == spec.label
        assert res.seats[1].usage.label.value == "OFF"

    def test_overlay(self):
        spec = clean_scenes(1, seed=6)[0]
        img, _ = render(spec)
        res = Detector(corpus_config(spec)).process(img)
        before = res.to_json(include_timing=True)
        vis = render_overlay(img, res)
        assert res.to_json(include_timing=True) == before          # presentation only
        assert vis.shape == (*img.shape, 3)
        green = (vis[:, :, 1] == 255) & (vis[:, :, 0] == 0) & (vis[:, :, 2] == 0)
        assert green.sum() > 100


class TestInputs:
    def test_gray_conversion(self):
        g = np.arange(12, dtype=np.uint8).reshape(3, 4)
        assert to_gray(g) is g
        assert np.array_equal(to_gray(np.dstack([g, g, g])), g)
        assert np.array_equal(to_gray(g[:, :, None]), g)
        with pytest.raises(ValueError):
            to_gray(np.zeros((2, 2, 2)))

    def test_directory_listing(self, tmp_path):
        for name in ("b.png", "a.PNG", "sub/c.jpg", "notes.txt"):
            (tmp_path / name).parent.mkdir(exist_ok=True)
            (tmp_path / name).write_bytes(b"")
        assert [f for _, f in list_inputs(tmp_path)] == ["a.PNG", "b.png", "sub/c.jpg"]
        assert list_inputs(tmp_path / "b.png") == [(tmp_path / "b.png", "b.png")]
        with pytest.raises(FileNotFoundError):
            list_inputs(tmp_path / "missing")

    def test_overlay_name(self):
        assert overlay_name("sub/frame_0001.jpg") == "sub__frame_0001.png"


class TestRunDetect:
    def test_unreadable_frame_gets_error_record(self, clean_corpus, tmp_path):
        src = tmp_path / "frames"
        src.mkdir()
        for p in sorted(clean_corpus.glob("*.png"))[:2]:
            (src / p.name).write_bytes(p.read_bytes())
        (src / "broken.png").write_bytes(b"not a png")
        out = io.StringIO()
        results = run_detect(load_config(clean_corpus / "config.yaml"), src, out=out)
        lines = [json.loads(line) for line in out.getvalue().splitlines()]
        assert [d["frame"] for d in lines] == ["broken.png", "frame_0000.png", "frame_0001.png"]
        assert "error" in lines[0] and lines[0]["seats"] == []
        assert all("error" not in d and len(d["seats"]) == 1 for d in lines[1:])
        assert results[0].error is not None

    def test_parallel_output_is_identical(self, clean_corpus):
        cfg = load_config(clean_corpus / "config.yaml")
        serial, parallel = io.StringIO(), io.StringIO()
        run_detect(cfg, clean_corpus, out=serial, jobs=1)
        run_detect(cfg, clean_corpus, out=parallel, jobs=2)
        assert serial.getvalue() == parallel.getvalue()
        assert len(serial.getvalue().splitlines()) == 6

    def test_timing_only_on_request(self, clean_corpus):
        cfg = load_config(clean_corpus / "config.yaml")
        plain, timed = io.StringIO(), io.StringIO()
        run_detect(cfg, clean_corpus / "frame_0000.png", out=plain)
        run_detect(cfg, clean_corpus / "frame_0000.png", out=timed, include_timing=True)
        assert "timing_ms" not in json.loads(plain.getvalue())
        timing = json.loads(timed.getvalue())["timing_ms"]
        assert {"scan", "total", "load", "seats"} <= set(timing)

    def test_overlays_written(self, clean_corpus, tmp_path):
        run_detect(load_config(clean_corpus / "config.yaml"), clean_corpus / "frame_0001.png",
                   overlay_dir=tmp_path / "ov")
        vis = cv2.imread(str(tmp_path / "ov" / "frame_0001.png"))
        assert vis is not None and vis.shape == (480, 640, 3)


class TestRunEval:
    def test_clean_corpus_is_perfect(self, clean_corpus):
        report = run_eval(load_config(clean_corpus / "config.yaml"), clean_corpus / "manifest.json")
        s = report.summary()
        assert s["frames"] == 6 and report.passed
        assert all(acc == 1.0 for acc in s["accuracy"].values())
        assert sum(sum(row.values()) for row in s["confusion"].values()) == 6
        assert s["rmse"]["count"] == 4 and s["rmse"]["mean"] <= 2.0
        assert len(report.records) == 6 and len(report.latency_ms) == 6

    def test_floors(self, clean_corpus):
        cfg = load_config(clean_corpus / "config.yaml")
        strict = replace(cfg, floors=EvalFloors(max_mean_rmse=1e-6, max_latency_ms=1e-6))
        report = run_eval(strict, clean_corpus / "manifest.json")
        assert not report.passed
        assert any("mean rmse" in f for f in report.failures)
        assert any("latency" in f for f in report.failures)

    def test_empty_manifest(self, clean_corpus, tmp_path):
        (tmp_path / "manifest.json").write_text(json.dumps({"entries": []}))
        report = run_eval(load_config(clean_corpus / "config.yaml"), tmp_path / "manifest.json")
        assert report.frames == 0 and report.passed
        assert report.summary()["rmse"]["mean"] is None

    @pytest.mark.parametrize("content,match", [
        ("{not json", "invalid"),
        (json.dumps({"frames": []}), "entries"),
        (json.dumps({"entries": [{"image": "x.png", "label": "MAYBE"}]}), "label"),
        (json.dumps({"entries": [{"image": "x.png", "label": "ON"}]}), "missing"),
    ])
    def test_bad_manifest(self, tmp_path, content, match):
        (tmp_path / "manifest.json").write_text(content)
        with pytest.raises(ManifestError, match=match):
            load_manifest(tmp_path / "manifest.json")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ManifestError):
            load_manifest(Path(tmp_path / "nope.json"))
