import json
from pathlib import Path

import cv2
import numpy as np
import pytest

from srgaze import data as data_mod

ASSETS = Path(__file__).parent / "assets"


@pytest.fixture(scope="session")
def face_image():
    """Checked-in natural-looking 448x448 test image (RGB uint8)."""
    img = cv2.imread(str(ASSETS / "face_448.png"), cv2.IMREAD_COLOR)
    return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)


@pytest.fixture(scope="session")
def face_image_112(face_image):
    from srgaze.degrade import resize
    return resize(face_image, 112, 112, "area")


@pytest.fixture(scope="session")
def golden_payload():
    return json.loads((ASSETS / "degrade_golden.json").read_text())


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """3 subjects x 12 images at 56px; enough for split/harness plumbing."""
    root = tmp_path_factory.mktemp("tiny-ds")
    return data_mod.generate_synthetic(3, 12, 56, seed=11, out_dir=root)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """3 subjects x 40 images at 56px; enough for short training runs."""
    root = tmp_path_factory.mktemp("small-ds")
    return data_mod.generate_synthetic(3, 40, 56, seed=5, out_dir=root)


def rng_images(n, size=32, seed=0):
    rng = np.random.default_rng(seed)
    return [rng.integers(0, 256, size=(size, size, 3)).astype(np.uint8) for _ in range(n)]
