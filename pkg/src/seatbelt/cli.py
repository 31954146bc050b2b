"""Command-line entry point: ``seatbelt {detect,eval,synth,mask-preview}``.

Every path/number flag falls back to a ``SEATBELT_<FLAG>`` environment
variable (``SEATBELT_CONFIG``, ``SEATBELT_INPUT``, ``SEATBELT_OUT``,
``SEATBELT_OVERLAY_DIR``, ``SEATBELT_JOBS``, ``SEATBELT_SEED``).

Exit codes: 0 success, 1 configuration error, 2 evaluation below floors,
3 I/O error.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from pathlib import Path

import cv2
import numpy as np

from .config import PipelineConfig, env_or, load_config
from .errors import ConfigError, ManifestError, SceneError, SeatbeltError

EXIT_OK, EXIT_CONFIG, EXIT_FLOOR, EXIT_IO = 0, 1, 2, 3

logger = logging.getLogger("seatbelt")


def _resolve(args: argparse.Namespace) -> argparse.Namespace:
    args.config = env_or(args.config, "config")
    args.input = env_or(args.input, "input")
    args.out = env_or(args.out, "out")
    args.overlay_dir = env_or(getattr(args, "overlay_dir", None), "overlay_dir")
    args.jobs = env_or(args.jobs, "jobs", int)
    args.jobs = 1 if args.jobs is None else args.jobs
    args.seed = env_or(args.seed, "seed", int)
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    return args


def _config(args) -> PipelineConfig:
    if not args.config:
        raise ConfigError("--config is required")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_msac_seed(args.seed)
    return cfg


@contextlib.contextmanager
def _open_out(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            yield fh


def cmd_detect(args) -> int:
    from .pipeline import run_detect

    cfg = _config(args)
    if not args.input:
        raise ConfigError("--input is required")
    out_path = args.out or cfg.output.json_path
    overlay_dir = args.overlay_dir or (cfg.output.overlay_dir if cfg.output.overlays else None)
    with _open_out(out_path) as out:
        results = run_detect(cfg, args.input, out=out, jobs=args.jobs, overlay_dir=overlay_dir,
                             include_timing=args.timing or cfg.output.timing)
    failed = sum(r.error is not None for r in results)
    logger.info("%d frames, %d unreadable", len(results), failed)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .pipeline import run_eval

    cfg = _config(args)
    if not args.input:
        raise ConfigError("--input (manifest) is required")
    manifest = Path(args.input)
    if manifest.is_dir():
        manifest = manifest / "manifest.json"
    report = run_eval(cfg, manifest, jobs=args.jobs)
    summary = report.summary()
    text = json.dumps(summary, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK if report.passed else EXIT_FLOOR


def cmd_synth(args) -> int:
    from .synth import balanced_corpus, load_scene_specs, write_corpus

    if not args.out:
        raise ConfigError("--out is required")
    if args.spec:
        scenes = load_scene_specs(args.spec)
    else:
        scenes = balanced_corpus(args.count, seed=args.seed or 0, occlusion=args.occlusion,
                                 centred_occluder=args.occlusion is not None)
    manifest = write_corpus(args.out, scenes)
    print(manifest)
    return EXIT_OK


def cmd_mask_preview(args) -> int:
    from .pipeline import Detector, load_gray

    cfg = _config(args)
    if not args.input or not args.out:
        raise ConfigError("--input and --out are required")
    img = load_gray(args.input)
    det = Detector(cfg)
    vis = cv2.cvtColor(np.clip(img, 0, 255).astype(np.uint8), cv2.COLOR_GRAY2BGR)
    for seat, mask in zip(cfg.seats, det.masks):
        cv2.polylines(vis, [np.round(mask.boundary()).astype(np.int32)], True, (255, 128, 0), 1, cv2.LINE_AA)
        f = mask.frame
        half = f.d_major / 2.0
        for sx in (-1.0, 1.0):
            x = f.origin_x + sx * half * np.cos(f.theta_s)
            y = f.origin_y + sx * half * np.sin(f.theta_s)
            cv2.circle(vis, (int(round(x)), int(round(y))), 4, (0, 255, 255), -1)
        cv2.putText(vis, seat.name, (int(f.origin_x), int(f.origin_y)), cv2.FONT_HERSHEY_SIMPLEX, 0.5,
                    (255, 128, 0), 1, cv2.LINE_AA)
    if not cv2.imwrite(str(args.out), vis):
        raise OSError(f"cannot write {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seatbelt", description="Seatbelt detection and usage classification.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, jobs=True):
        p.add_argument("--config", help="pipeline config YAML")
        p.add_argument("--input", help="image, directory or manifest")
        p.add_argument("--out", help="output path")
        p.add_argument("--seed", type=int, help="RNG seed (MSAC for detect/eval, corpus for synth)")
        if jobs:
            p.add_argument("--jobs", type=int, help="worker processes (default 1)")
        else:
            p.set_defaults(jobs=None)

    p = sub.add_parser("detect", help="classify belt usage in images; JSON lines out")
    common(p)
    p.add_argument("--overlay-dir", help="write overlay PNGs here")
    p.add_argument("--timing", action="store_true", help="include per-stage timings in the JSON")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="score a synthetic corpus against its manifest")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="render a ground-truthed synthetic corpus")
    common(p, jobs=False)
    p.add_argument("--count", type=int, default=30, help="scenes, cycling ON/UNDER/OFF")
    p.add_argument("--occlusion", type=float, help="centred occluder over this centreline fraction")
    p.add_argument("--spec", help="YAML file with one scene or a list of scenes")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("mask-preview", help="draw the seat location masks over a frame")
    common(p, jobs=False)
    p.set_defaults(func=cmd_mask_preview)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(_resolve(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ManifestError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SceneError, SeatbeltError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
