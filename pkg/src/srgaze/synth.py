"""Procedural face/eye renderer with analytically exact gaze labels.

Every face is drawn from a parameter dict, so images are reproducible from
metadata alone.  The iris center is displaced from the eye center by a fixed
linear map of the gaze label:

    offset_x = PX_PER_RAD_FRAC * size * yaw
    offset_y = -PX_PER_RAD_FRAC * size * pitch

which makes the label recoverable from pixels by locating the iris.
"""

import numpy as np
import cv2

from .imutils import round_u8

# geometry as fractions of the square image side
EYE_Y = 0.40
EYE_X = (0.35, 0.65)
SCLERA_RX = 0.12
SCLERA_RY = 0.085
IRIS_R = 0.030
PUPIL_R = 0.012
PX_PER_RAD_FRAC = 0.09

PITCH_RANGE = (-0.4, 0.4)
YAW_RANGE = (-0.6, 0.6)

_SHIFT = 4  # cv2 subpixel shift bits
_SCALE = 1 << _SHIFT


def px_per_rad(size):
    """Iris displacement in pixels per radian of gaze at the given image side."""
    return PX_PER_RAD_FRAC * size


def max_renderable_gaze(size):
    """Largest |pitch|, |yaw| whose iris still fits inside the sclera."""
    k = px_per_rad(size)
    max_yaw = (SCLERA_RX - IRIS_R) * size / k
    max_pitch = (SCLERA_RY - IRIS_R) * size / k
    return max_pitch, max_yaw


def sample_subject_params(rng):
    """Per-subject appearance: skin/iris hue, feature jitter, freckles."""
    skin = np.array([200, 170, 140], dtype=np.float64) + rng.uniform(-25, 25, size=3)
    iris = np.array([60, 45, 30], dtype=np.float64) + rng.uniform(-25, 25, size=3)
    mouth = np.array([150, 60, 60], dtype=np.float64) + rng.uniform(-20, 20, size=3)
    eye_jitter = rng.uniform(-0.01, 0.01, size=(2, 2))
    freckles = rng.uniform(0.15, 0.85, size=(int(rng.integers(3, 8)), 2))
    return {
        "skin_rgb": skin.tolist(),
        "iris_rgb": np.clip(iris, 10, 120).tolist(),
        "mouth_rgb": mouth.tolist(),
        "eye_jitter": eye_jitter.tolist(),
        "freckles": freckles.tolist(),
    }


def sample_image_params(rng):
    """Per-image variation: gaze label and lighting jitter."""
    pitch = float(rng.uniform(*PITCH_RANGE))
    yaw = float(rng.uniform(*YAW_RANGE))
    lighting = float(rng.uniform(0.9, 1.1))
    return {"pitch": pitch, "yaw": yaw, "lighting": lighting}


def _ellipse(img, center_xy, axes_xy, color):
    cx, cy = (int(round(c * _SCALE)) for c in center_xy)
    ax, ay = (int(round(a * _SCALE)) for a in axes_xy)
    cv2.ellipse(img, (cx, cy), (ax, ay), 0, 0, 360, color, -1, cv2.LINE_AA, shift=_SHIFT)


def _circle(img, center_xy, radius, color):
    cx, cy = (int(round(c * _SCALE)) for c in center_xy)
    cv2.circle(img, (cx, cy), int(round(radius * _SCALE)), color, -1, cv2.LINE_AA, shift=_SHIFT)


def render_face(size, subject_params, image_params, gaze=None):
    """Render one face image; `gaze` overrides the metadata's (pitch, yaw).

    Returns (image u8 RGB, geometry dict).  The geometry dict carries
    everything needed to re-render the face (used by the center-gaze stub)
    plus the eye centers and iris offsets in pixels.
    """
    sp, ip = subject_params, image_params
    pitch = ip["pitch"] if gaze is None else float(gaze[0])
    yaw = ip["yaw"] if gaze is None else float(gaze[1])

    # clamp gaze to the renderable range instead of mislabeling
    max_pitch, max_yaw = max_renderable_gaze(size)
    pitch = float(np.clip(pitch, -max_pitch, max_pitch))
    yaw = float(np.clip(yaw, -max_yaw, max_yaw))

    k = px_per_rad(size)
    off_x = k * yaw
    off_y = -k * pitch

    img = np.empty((size, size, 3), dtype=np.float64)
    img[:] = sp["skin_rgb"]
    # mild vertical shading so the background is not flat
    shade = np.linspace(-8.0, 8.0, size)[:, None, None]
    img += shade
    img = np.clip(img, 0, 255).astype(np.uint8)

    # face outline
    cv2.ellipse(img, (size // 2, int(0.52 * size)),
                (int(0.42 * size), int(0.48 * size)), 0, 0, 360,
                tuple(float(c) - 12.0 for c in sp["skin_rgb"]), 2, cv2.LINE_AA)

    for fx, fy in sp["freckles"]:
        _circle(img, (fx * size, fy * size), 0.004 * size,
                tuple(float(c) - 30.0 for c in sp["skin_rgb"]))

    # nose and mouth distractors
    nose_tip = (0.5 * size, 0.58 * size)
    cv2.line(img, (int(0.5 * size), int(0.46 * size)),
             (int(nose_tip[0]), int(nose_tip[1])),
             tuple(float(c) - 40.0 for c in sp["skin_rgb"]), max(1, size // 100), cv2.LINE_AA)
    _ellipse(img, (0.5 * size, 0.72 * size), (0.10 * size, 0.03 * size), tuple(sp["mouth_rgb"]))

    eye_centers = []
    for i, ex in enumerate(EYE_X):
        jx, jy = sp["eye_jitter"][i]
        cx = (ex + jx) * size
        cy = (EYE_Y + jy) * size
        eye_centers.append([cx, cy])
        _ellipse(img, (cx, cy), (SCLERA_RX * size, SCLERA_RY * size), (248.0, 248.0, 248.0))
        _circle(img, (cx + off_x, cy + off_y), IRIS_R * size, tuple(sp["iris_rgb"]))
        _circle(img, (cx + off_x, cy + off_y), PUPIL_R * size, (10.0, 10.0, 10.0))

    img = round_u8(img.astype(np.float64) * ip["lighting"])

    geometry = {
        "size": size,
        "pitch": pitch,
        "yaw": yaw,
        "eye_centers": eye_centers,
        "iris_offset": [off_x, off_y],
        "px_per_rad": k,
        "iris_radius": IRIS_R * size,
        "sclera_axes": [SCLERA_RX * size, SCLERA_RY * size],
        "subject_params": sp,
        "image_params": dict(ip, pitch=pitch, yaw=yaw),
    }
    return img, geometry


def rerender_centered(geometry, factor=1, size=None):
    """Re-render a synthetic face with the iris forced to the eye center.

    Stand-in for restoration models that hallucinate a camera-facing gaze;
    upscales by `factor` (or to an explicit `size`) and zeroes the gaze,
    preserving everything else.
    """
    if not geometry or "subject_params" not in geometry:
        raise ValueError("center-gaze stub requires synthetic geometry metadata")
    if size is None:
        size = int(geometry["size"]) * int(factor)
    img, _ = render_face(size, geometry["subject_params"], geometry["image_params"],
                         gaze=(0.0, 0.0))
    return img


def decode_gaze(img, geometry):
    """Inverse-render oracle: recover (pitch, yaw) from iris pixel positions.

    Finds dark pixels inside each sclera ellipse, takes their darkness-weighted
    centroid, and inverts the linear gaze-to-offset map.  Independent of the
    renderer's drawing path.
    """
    h, w = img.shape[:2]
    scale = h / float(geometry["size"])
    k = geometry["px_per_rad"] * scale
    rx, ry = (a * scale for a in geometry["sclera_axes"])
    gray = img.astype(np.float64).mean(axis=2)

    offsets = []
    for cx, cy in geometry["eye_centers"]:
        cx, cy = cx * scale, cy * scale
        x0, x1 = int(max(0, cx - rx)), int(min(w, cx + rx + 1))
        y0, y1 = int(max(0, cy - ry)), int(min(h, cy + ry + 1))
        patch = gray[y0:y1, x0:x1]
        ys, xs = np.mgrid[y0:y1, x0:x1]
        inside = ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 <= 1.0
        # 120 sits between the iris/pupil tones (< ~90 after lighting) and
        # everything else in the eye box (sclera, skin blends: > ~140)
        weight = np.clip(120.0 - patch, 0.0, None) * inside
        if weight.sum() <= 0:
            continue
        ox = float((weight * xs).sum() / weight.sum()) - cx
        oy = float((weight * ys).sum() / weight.sum()) - cy
        offsets.append((ox, oy))
    if not offsets:
        raise ValueError("no iris pixels found; not a synthetic-style image?")
    ox = float(np.mean([o[0] for o in offsets]))
    oy = float(np.mean([o[1] for o in offsets]))
    return (-oy / k, ox / k)
