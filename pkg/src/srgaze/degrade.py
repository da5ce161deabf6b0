"""Deterministic real-world-style image degradation.

A recipe is fully materialized from (ranges, seed) before anything touches
pixels: blur sigma, downscale factor and method, noise level and mode, JPEG
quality, plus the shuffled order of the blur/rescale/noise stages.  JPEG is
always the final stage.  Applying the same recipe to the same image is a pure
function (given a pinned JPEG codec).
"""

import dataclasses
import math

import cv2
import numpy as np
from scipy import ndimage

from .imutils import check_image_u8, round_u8

STAGES = ("BLUR", "RESCALE", "NOISE")
RESCALE_METHODS = ("nearest", "bilinear", "bicubic", "area")
NOISE_MODES = ("gray", "color")

_CV2_INTERP = {
    "nearest": cv2.INTER_NEAREST,
    "bilinear": cv2.INTER_LINEAR,
    "bicubic": cv2.INTER_CUBIC,
    "area": cv2.INTER_AREA,
}


def codec_fingerprint():
    """Identifier of the JPEG codec this build is pinned to."""
    return f"opencv-{cv2.__version__}"


@dataclasses.dataclass(frozen=True)
class DegradationRanges:
    """Sampling bounds for recipe fields plus per-stage inclusion probabilities."""

    blur_sigma: tuple = (0.2, 3.0)
    rescale_factor: tuple = (1.0, 4.0)
    noise_sigma: tuple = (0.004, 0.1)
    jpeg_quality: tuple = (30, 95)
    rescale_methods: tuple = RESCALE_METHODS
    noise_modes: tuple = NOISE_MODES
    p_blur: float = 0.8
    p_rescale: float = 0.8
    p_noise: float = 0.8

    def validate(self):
        for name in ("blur_sigma", "rescale_factor", "noise_sigma", "jpeg_quality"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: min {lo} > max {hi}")
        if not (0.1 <= self.blur_sigma[0] and self.blur_sigma[1] <= 5.0):
            raise ValueError("blur_sigma bounds must lie in [0.1, 5.0]")
        if not (1.0 <= self.rescale_factor[0] and self.rescale_factor[1] <= 4.0):
            raise ValueError("rescale_factor bounds must lie in [1, 4]")
        if not (0.0 <= self.noise_sigma[0] and self.noise_sigma[1] <= 0.2):
            raise ValueError("noise_sigma bounds must lie in [0, 0.2]")
        if not (5 <= self.jpeg_quality[0] and self.jpeg_quality[1] <= 100):
            raise ValueError("jpeg_quality bounds must lie in [5, 100]")
        for p in (self.p_blur, self.p_rescale, self.p_noise):
            if not 0.0 <= p <= 1.0:
                raise ValueError("stage probabilities must lie in [0, 1]")
        for m in self.rescale_methods:
            if m not in RESCALE_METHODS:
                raise ValueError(f"unknown rescale method {m!r}")
        for m in self.noise_modes:
            if m not in NOISE_MODES:
                raise ValueError(f"unknown noise mode {m!r}")
        return self


@dataclasses.dataclass(frozen=True)
class DegradationRecipe:
    """Fully materialized degradation parameters; no hidden RNG at apply time."""

    seed: int
    stage_order: tuple
    blur_sigma: float
    rescale_factor: float
    rescale_method: str
    noise_sigma: float
    noise_mode: str
    noise_seed: int
    jpeg_quality: int

    def validate(self):
        if sorted(self.stage_order) != sorted(STAGES):
            raise ValueError(f"stage_order must permute {STAGES}, got {self.stage_order}")
        if not (self.blur_sigma == 0.0 or 0.1 <= self.blur_sigma <= 5.0):
            raise ValueError(f"blur_sigma out of range: {self.blur_sigma}")
        if not 1.0 <= self.rescale_factor <= 4.0:
            raise ValueError(f"rescale_factor out of range: {self.rescale_factor}")
        if not 0.0 <= self.noise_sigma <= 0.2:
            raise ValueError(f"noise_sigma out of range: {self.noise_sigma}")
        if not 5 <= self.jpeg_quality <= 100:
            raise ValueError(f"jpeg_quality out of range: {self.jpeg_quality}")
        if self.rescale_method not in RESCALE_METHODS:
            raise ValueError(f"unknown rescale method {self.rescale_method!r}")
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"unknown noise mode {self.noise_mode!r}")
        return self

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["stage_order"] = list(self.stage_order)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["stage_order"] = tuple(d["stage_order"])
        return cls(**d).validate()


def identity_recipe(seed=0):
    """Recipe whose every stage is a no-op except a quality-100 JPEG pass."""
    return DegradationRecipe(
        seed=seed, stage_order=STAGES, blur_sigma=0.0, rescale_factor=1.0,
        rescale_method="bicubic", noise_sigma=0.0, noise_mode="gray",
        noise_seed=seed, jpeg_quality=100,
    )


def sample_recipe(ranges, seed):
    """Draw a recipe deterministically from (ranges, seed).

    Omitted stages are recorded explicitly with identity parameters
    (sigma 0 / factor 1 / noise 0) so the recipe alone replays the pipeline.
    """
    ranges.validate()
    rng = np.random.default_rng(np.uint64(seed))
    order = tuple(STAGES[i] for i in rng.permutation(len(STAGES)))

    use_blur = rng.random() < ranges.p_blur
    use_rescale = rng.random() < ranges.p_rescale
    use_noise = rng.random() < ranges.p_noise

    blur_sigma = float(rng.uniform(*ranges.blur_sigma)) if use_blur else 0.0
    rescale_factor = float(rng.uniform(*ranges.rescale_factor)) if use_rescale else 1.0
    rescale_method = str(rng.choice(ranges.rescale_methods))
    noise_sigma = float(rng.uniform(*ranges.noise_sigma)) if use_noise else 0.0
    noise_mode = str(rng.choice(ranges.noise_modes))
    jpeg_quality = int(rng.integers(ranges.jpeg_quality[0], ranges.jpeg_quality[1] + 1))
    noise_seed = int(rng.integers(0, 2 ** 63))

    return DegradationRecipe(
        seed=int(seed), stage_order=order, blur_sigma=blur_sigma,
        rescale_factor=rescale_factor, rescale_method=rescale_method,
        noise_sigma=noise_sigma, noise_mode=noise_mode, noise_seed=noise_seed,
        jpeg_quality=jpeg_quality,
    ).validate()


def gaussian_blur(img, sigma):
    """Isotropic Gaussian blur, kernel radius ceil(3*sigma), reflect padding."""
    img = check_image_u8(img)
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return img.copy()
    radius = int(math.ceil(3.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(xs ** 2) / (2.0 * sigma ** 2))
    kernel /= kernel.sum()
    out = img.astype(np.float64)
    out = ndimage.correlate1d(out, kernel, axis=0, mode="reflect")
    out = ndimage.correlate1d(out, kernel, axis=1, mode="reflect")
    return round_u8(out)


def resize(img, out_h, out_w, method):
    """Resize to (out_h, out_w); half-pixel-center (align-corners = false) sampling."""
    img = check_image_u8(img)
    if out_h < 8 or out_w < 8:
        raise ValueError(f"target size must be >= 8, got {(out_h, out_w)}")
    if method not in _CV2_INTERP:
        raise ValueError(f"unsupported resize method {method!r}")
    if (out_h, out_w) == img.shape[:2] and method == "nearest":
        return img.copy()
    out = cv2.resize(img.astype(np.float32), (out_w, out_h), interpolation=_CV2_INTERP[method])
    if out.ndim == 2:
        out = out[:, :, None]
    return round_u8(out)


def add_gaussian_noise(img, sigma, mode, seed):
    """Add i.i.d. Gaussian noise on the [0, 1] intensity scale, clamped to u8.

    gray mode perturbs all channels identically at each pixel; color mode
    draws per-channel noise.
    """
    img = check_image_u8(img)
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if mode not in NOISE_MODES:
        raise ValueError(f"unknown noise mode {mode!r}")
    if sigma == 0:
        return img.copy()
    h, w, c = img.shape
    rng = np.random.default_rng(np.uint64(seed))
    shape = (h, w, 1) if mode == "gray" else (h, w, c)
    noise = rng.normal(0.0, sigma * 255.0, size=shape)
    return round_u8(img.astype(np.float64) + noise)


def jpeg_compress(img, quality):
    """Round-trip through the pinned JPEG codec at the given quality."""
    img = check_image_u8(img)
    if not 5 <= int(quality) <= 100:
        raise ValueError(f"jpeg quality must lie in [5, 100], got {quality}")
    c = img.shape[2]
    encodable = img[:, :, 0] if c == 1 else cv2.cvtColor(img, cv2.COLOR_RGB2BGR)
    ok, buf = cv2.imencode(".jpg", encodable, [cv2.IMWRITE_JPEG_QUALITY, int(quality)])
    if not ok:
        raise RuntimeError("JPEG encoding failed")
    decoded = cv2.imdecode(buf, cv2.IMREAD_GRAYSCALE if c == 1 else cv2.IMREAD_COLOR)
    if c == 1:
        return decoded[:, :, None]
    return cv2.cvtColor(decoded, cv2.COLOR_BGR2RGB)


def complex_degrade(img, recipe, target_size=None):
    """Apply a materialized recipe: shuffled blur/rescale/noise, then JPEG last.

    The rescale stage downscales by recipe.rescale_factor; before the final
    JPEG pass the image is restored to target_size (default: input size) with
    the recipe's rescale method, so the output shape is always the target.
    """
    img = check_image_u8(img)
    recipe.validate()
    in_h, in_w = img.shape[:2]
    out_h, out_w = target_size if target_size is not None else (in_h, in_w)

    out = img
    for stage in recipe.stage_order:
        if stage == "BLUR":
            out = gaussian_blur(out, recipe.blur_sigma)
        elif stage == "RESCALE":
            if recipe.rescale_factor > 1.0:
                h = max(8, int(round(out.shape[0] / recipe.rescale_factor)))
                w = max(8, int(round(out.shape[1] / recipe.rescale_factor)))
                out = resize(out, h, w, recipe.rescale_method)
        elif stage == "NOISE":
            out = add_gaussian_noise(out, recipe.noise_sigma, recipe.noise_mode, recipe.noise_seed)
    if out.shape[:2] != (out_h, out_w):
        out = resize(out, out_h, out_w, recipe.rescale_method)
    return jpeg_compress(out, recipe.jpeg_quality)
