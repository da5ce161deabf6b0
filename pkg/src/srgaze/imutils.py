"""8-bit image carrier helpers: validation, float conversion, rounding, PSNR."""

import math

import numpy as np

#: sentinel returned by psnr_db when the two images are bit-identical
PSNR_INF = math.inf

MIN_SIDE = 8


def check_image_u8(img, name="image"):
    """Validate an (H, W, C) uint8 image with C in {1, 3} and sides >= 8."""
    a = np.asarray(img)
    if a.dtype != np.uint8:
        raise ValueError(f"{name}: expected uint8 data, got {a.dtype}")
    if a.ndim != 3 or a.shape[2] not in (1, 3):
        raise ValueError(f"{name}: expected (H, W, C) with C in {{1, 3}}, got shape {a.shape}")
    if a.shape[0] < MIN_SIDE or a.shape[1] < MIN_SIDE:
        raise ValueError(f"{name}: height and width must be >= {MIN_SIDE}, got {a.shape[:2]}")
    return a


def to_float01(img):
    """uint8 [0, 255] -> float32 [0, 1]."""
    return np.asarray(img, dtype=np.float32) / 255.0


def round_u8(x):
    """float intensities -> uint8, rounding half away from zero, then clamping.

    Single fixed rounding rule so outputs do not drift across platforms.
    """
    x = np.asarray(x, dtype=np.float64)
    rounded = np.copysign(np.floor(np.abs(x) + 0.5), x)
    return np.clip(rounded, 0, 255).astype(np.uint8)


def from_float01(x):
    """float [0, 1] -> uint8 via the package rounding rule."""
    return round_u8(np.asarray(x, dtype=np.float64) * 255.0)


def psnr_db(a, b):
    """PSNR in dB between two same-shape uint8 images; PSNR_INF when identical."""
    a = check_image_u8(a, "a")
    b = check_image_u8(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a.astype(np.float64) - b.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(255.0 ** 2 / mse)
