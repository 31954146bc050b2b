from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest

from seatbelt.config import PipelineConfig
from seatbelt.geometry import CameraModel
from seatbelt.predictor import PredictorParams
from seatbelt.shape import MsacParams
from seatbelt.synth import (
    CORPUS_MSAC,
    CORPUS_PREDICTOR,
    CORPUS_SEAT,
    balanced_corpus,
    default_camera,
    seat_for_scene,
    write_corpus,
)


def rotation_z(angle: float) -> tuple[float, ...]:
    c, s = math.cos(angle), math.sin(angle)
    return (c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)


def random_rotation(rng: np.random.Generator) -> tuple[float, ...]:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return tuple(q.ravel())


def corpus_config(spec, **seat_kwargs) -> PipelineConfig:
    """Detector config matching what ``write_corpus`` emits for ``spec``'s anchors."""
    cam = default_camera()
    seat = seat_for_scene(cam, spec, name="driver", **{**CORPUS_SEAT, **seat_kwargs})
    return PipelineConfig(camera=cam, seats=(seat,), predictor=PredictorParams(**CORPUS_PREDICTOR),
                          msac=MsacParams(**CORPUS_MSAC))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def identity_camera() -> CameraModel:
    return CameraModel(fx=500.0, fy=500.0, cx=320.0, cy=320.0)


def clean_scenes(count: int, seed: int = 0):
    """Noise-free, unblurred, unwarped, unoccluded corpus scenes."""
    return balanced_corpus(count, seed=seed, occlusion=0.0, warp=False, noise_max=0.0, blur_choices=(0,))


@pytest.fixture(scope="session")
def clean_corpus(tmp_path_factory) -> Path:
    """Directory holding a rendered six-frame clean corpus with its config."""
    out = tmp_path_factory.mktemp("clean_corpus")
    write_corpus(out, clean_scenes(6, seed=4))
    return out
