"""Pipeline configuration file (YAML).

Layout::

    calibration: calibration.yaml      # relative to this file
    poly_order: 4
    scan_region: mask                  # "mask" or "full"
    predictor: {k: 7, directions: 8, rho_max: 0.05, ...}
    msac: {iterations: 500, inlier_tol: 8.0, ...}
    seats:
      - name: driver
        anchor_tr: [X, Y, Z]           # vehicle frame, mm
        anchor_bl: [X, Y, Z]
        d_minor_ratio: 0.45            # or d_minor (pixels)
        gamma_pre: 0.5
        angle_threshold: 30.0
        min_candidates: 20
    output: {json: null, overlay_dir: null, overlays: false, timing: false}
    eval: {min_accuracy: 0.95, max_mean_rmse: 2.0, max_p95_rmse: 4.0}

Every block except ``calibration`` and ``seats`` is optional.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .assembler import SeatConfig
from .errors import ConfigError, SeatbeltError
from .geometry import Anchor3D, CameraModel, load_calibration
from .predictor import PredictorParams
from .shape import DEFAULT_ORDER, MsacParams

SCAN_REGIONS = ("mask", "full")


@dataclass(frozen=True)
class OutputOptions:
    json_path: str | None = None
    overlay_dir: str | None = None
    overlays: bool = False
    timing: bool = False


@dataclass(frozen=True)
class EvalFloors:
    """Minimum quality a corpus evaluation must reach; ``None`` disables a floor."""

    min_accuracy: float | None = 0.95
    max_mean_rmse: float | None = 2.0
    max_p95_rmse: float | None = 4.0
    max_latency_ms: float | None = None


@dataclass(frozen=True)
class PipelineConfig:
    camera: CameraModel
    seats: tuple[SeatConfig, ...]
    predictor: PredictorParams = field(default_factory=PredictorParams)
    msac: MsacParams = field(default_factory=MsacParams)
    poly_order: int = DEFAULT_ORDER
    scan_region: str = "mask"
    output: OutputOptions = field(default_factory=OutputOptions)
    floors: EvalFloors = field(default_factory=EvalFloors)
    calibration_path: Path | None = None

    def __post_init__(self):
        if not self.seats:
            raise ConfigError("at least one seat block is required")
        names = [s.name for s in self.seats]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate seat names: {names}")
        if self.poly_order < 1:
            raise ConfigError("poly_order must be >= 1")
        for s in self.seats:
            if s.min_candidates < self.poly_order + 1:
                raise ConfigError(f"seat {s.name!r}: min_candidates must be >= poly_order + 1")
        if self.scan_region not in SCAN_REGIONS:
            raise ConfigError(f"scan_region must be one of {SCAN_REGIONS}")

    def with_msac_seed(self, seed: int) -> "PipelineConfig":
        return dataclasses.replace(self, msac=dataclasses.replace(self.msac, seed=int(seed)))


def _build(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except (SeatbeltError, TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _anchor(value, where: str) -> Anchor3D:
    try:
        x, y, z = (float(v) for v in value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: expected [X, Y, Z]") from exc
    return Anchor3D(x, y, z)


def _seat(data, i: int) -> SeatConfig:
    where = f"seats[{i}]"
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    data = dict(data)
    for key in ("anchor_tr", "anchor_bl"):
        if key not in data:
            raise ConfigError(f"{where}: missing {key}")
        data[key] = _anchor(data[key], f"{where}.{key}")
    data.setdefault("name", f"seat{i}")
    return _build(SeatConfig, data, where)


def _output(data) -> OutputOptions:
    data = dict(data or {})
    if "json" in data:
        data["json_path"] = data.pop("json")
    return _build(OutputOptions, data, "output")


def load_config(path: str | Path) -> PipelineConfig:
    """Parse and validate a pipeline config; every problem raises :class:`ConfigError`."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    allowed = {"calibration", "poly_order", "scan_region", "predictor", "msac", "seats", "output", "eval"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    if "calibration" not in raw:
        raise ConfigError(f"{path}: missing calibration")
    calib = Path(raw["calibration"])
    if not calib.is_absolute():
        calib = path.parent / calib
    if not calib.is_file():
        raise ConfigError(f"calibration file not found: {calib}")
    try:
        camera = load_calibration(calib)
    except (SeatbeltError, OSError, KeyError, TypeError, ValueError, yaml.YAMLError) as exc:
        raise ConfigError(f"bad calibration {calib}: {exc}") from exc
    seats = raw.get("seats")
    if not isinstance(seats, list) or not seats:
        raise ConfigError(f"{path}: seats must be a non-empty list")
    predictor = dict(raw.get("predictor") or {})
    if "weights" in predictor and predictor["weights"] is not None:
        predictor["weights"] = tuple(predictor["weights"])
    try:
        return PipelineConfig(
            camera=camera,
            seats=tuple(_seat(s, i) for i, s in enumerate(seats)),
            predictor=_build(PredictorParams, predictor, "predictor"),
            msac=_build(MsacParams, raw.get("msac"), "msac"),
            poly_order=int(raw.get("poly_order", DEFAULT_ORDER)),
            scan_region=str(raw.get("scan_region", "mask")),
            output=_output(raw.get("output")),
            floors=_build(EvalFloors, raw.get("eval"), "eval"),
            calibration_path=calib,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _seat_dict(seat: SeatConfig) -> dict:
    d = {
        "name": seat.name,
        "anchor_tr": [seat.anchor_tr.X, seat.anchor_tr.Y, seat.anchor_tr.Z],
        "anchor_bl": [seat.anchor_bl.X, seat.anchor_bl.Y, seat.anchor_bl.Z],
        "gamma_pre": seat.gamma_pre,
        "angle_threshold": seat.angle_threshold,
        "min_candidates": seat.min_candidates,
    }
    if seat.d_minor is not None:
        d["d_minor"] = seat.d_minor
    else:
        d["d_minor_ratio"] = seat.d_minor_ratio
    return d


def config_dict(calibration: str, seats, predictor: PredictorParams | None = None,
                msac: MsacParams | None = None, poly_order: int = DEFAULT_ORDER,
                scan_region: str = "mask", floors: EvalFloors | None = None) -> dict:
    return {
        "calibration": str(calibration),
        "poly_order": int(poly_order),
        "scan_region": scan_region,
        "predictor": (predictor or PredictorParams()).to_dict(),
        "msac": (msac or MsacParams()).to_dict(),
        "seats": [_seat_dict(s) for s in seats],
        "eval": dataclasses.asdict(floors or EvalFloors()),
    }


def write_config(path: str | Path, calibration: str, seats, **kwargs) -> None:
    Path(path).write_text(yaml.safe_dump(config_dict(calibration, seats, **kwargs), sort_keys=False))


def env_or(value, name: str, cast=str):
    """``value`` if given, else the ``SEATBELT_<NAME>`` environment variable, else ``None``."""
    if value is not None:
        return value
    raw = os.environ.get(f"SEATBELT_{name.upper()}")
    if raw is None or raw == "":
        return None
    try:
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"SEATBELT_{name.upper()}={raw!r}: {exc}") from exc
