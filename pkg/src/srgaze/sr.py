"""Super-resolution front ends.

`SRBackbone` is a desk-scale windowed-attention SR network (shallow conv,
residual groups of shifted-window transformer blocks, pixel-shuffle
reconstruction) with a bicubic image skip.  Zeroing the last reconstruction
conv therefore makes the model exactly bicubic interpolation, which gives an
analytically anchored starting point for tests and pretext training.

The forward pass exposes two feature taps at input resolution:
  shallow — after the first convolution
  deep    — after the last residual group, before reconstruction
"""

import dataclasses

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import degrade, synth
from .imutils import check_image_u8, to_float01, from_float01


@dataclasses.dataclass(frozen=True)
class SRBackboneConfig:
    scale: int = 4
    embed_dim: int = 32
    num_groups: int = 2
    blocks_per_group: int = 2
    window_size: int = 8

    def validate(self):
        if self.scale not in (2, 4):
            raise ValueError(f"scale must be 2 or 4, got {self.scale}")
        if min(self.embed_dim, self.num_groups, self.blocks_per_group, self.window_size) < 1:
            raise ValueError("all size fields must be >= 1")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclasses.dataclass
class SROutput:
    image: np.ndarray  # uint8, (scale*H, scale*W, 3)
    taps: dict  # {"shallow": (C,H,W), "deep": (C,H,W)} float arrays


class WindowAttention(nn.Module):
    """Multi-head self-attention within non-overlapping square windows."""

    def __init__(self, dim, window_size, num_heads):
        super().__init__()
        self.dim = dim
        self.window_size = window_size
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)
        n = window_size * window_size
        self.pos_bias = nn.Parameter(torch.zeros(num_heads, n, n))

    def forward(self, x):
        # x: (num_windows*B, tokens, dim)
        b, n, c = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.num_heads, c // self.num_heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        attn = (q @ k.transpose(-2, -1)) * self.scale + self.pos_bias
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, c)
        return self.proj(out)


class SwinBlock(nn.Module):
    def __init__(self, dim, window_size, num_heads, shift):
        super().__init__()
        self.window_size = window_size
        self.shift = shift
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, window_size, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, dim * 2), nn.GELU(), nn.Linear(dim * 2, dim))

    def forward(self, x):
        # x: (B, H, W, C); H, W are multiples of window_size
        b, h, w, c = x.shape
        ws = self.window_size
        y = self.norm1(x)
        if self.shift:
            # cyclic shift; at toy scale we accept wrap-around attention
            # instead of masking the rolled borders
            y = torch.roll(y, (-(ws // 2), -(ws // 2)), dims=(1, 2))
        y = y.view(b, h // ws, ws, w // ws, ws, c).permute(0, 1, 3, 2, 4, 5)
        y = y.reshape(-1, ws * ws, c)
        y = self.attn(y)
        y = y.view(b, h // ws, w // ws, ws, ws, c).permute(0, 1, 3, 2, 4, 5).reshape(b, h, w, c)
        if self.shift:
            y = torch.roll(y, (ws // 2, ws // 2), dims=(1, 2))
        x = x + y
        return x + self.mlp(self.norm2(x))


class ResidualGroup(nn.Module):
    def __init__(self, dim, window_size, num_heads, num_blocks):
        super().__init__()
        self.blocks = nn.ModuleList(
            SwinBlock(dim, window_size, num_heads, shift=(i % 2 == 1))
            for i in range(num_blocks))
        self.conv = nn.Conv2d(dim, dim, 3, padding=1)

    def forward(self, x):
        # x: (B, C, H, W)
        y = x.permute(0, 2, 3, 1)
        for blk in self.blocks:
            y = blk(y)
        y = y.permute(0, 3, 1, 2)
        return x + self.conv(y)


class SRBackbone(nn.Module):
    def __init__(self, cfg: SRBackboneConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        dim = cfg.embed_dim
        heads = max(1, dim // 16)
        self.conv_first = nn.Conv2d(3, dim, 3, padding=1)
        self.groups = nn.ModuleList(
            ResidualGroup(dim, cfg.window_size, heads, cfg.blocks_per_group)
            for _ in range(cfg.num_groups))
        self.conv_body = nn.Conv2d(dim, dim, 3, padding=1)
        self.conv_up = nn.Conv2d(dim, dim * cfg.scale ** 2, 3, padding=1)
        self.shuffle = nn.PixelShuffle(cfg.scale)
        self.conv_last = nn.Conv2d(dim, 3, 3, padding=1)

    def init_identity(self):
        """Zero the output conv so the model equals bicubic interpolation."""
        nn.init.zeros_(self.conv_last.weight)
        nn.init.zeros_(self.conv_last.bias)
        return self

    def forward(self, x, return_taps=False):
        # x: (B, 3, H, W) in [0, 1]
        _, _, h, w = x.shape
        ws = self.cfg.window_size
        pad_h = (-h) % ws
        pad_w = (-w) % ws
        xp = F.pad(x, (0, pad_w, 0, pad_h), mode="reflect") if (pad_h or pad_w) else x

        shallow = self.conv_first(xp)
        feats = shallow
        for group in self.groups:
            feats = group(feats)
        deep = feats
        body = shallow + self.conv_body(deep)
        recon = self.conv_last(self.shuffle(self.conv_up(body)))
        recon = recon[:, :, : h * self.cfg.scale, : w * self.cfg.scale]
        skip = F.interpolate(x, scale_factor=self.cfg.scale, mode="bicubic",
                             align_corners=False)
        image = skip + recon
        if return_taps:
            return image, {"shallow": shallow[:, :, :h, :w], "deep": deep[:, :, :h, :w]}
        return image


def build_sr_backbone(cfg, seed=0, identity_init=False):
    torch.manual_seed(seed)
    model = SRBackbone(cfg)
    if identity_init:
        model.init_identity()
    return model


def interpolate_upscale(img, factor, method="bicubic"):
    """Plain interpolation baseline: upscale by an integer factor."""
    img = check_image_u8(img)
    if factor not in (2, 4):
        raise ValueError(f"factor must be 2 or 4, got {factor}")
    return degrade.resize(img, img.shape[0] * factor, img.shape[1] * factor, method)


def _to_tensor(img):
    return torch.from_numpy(to_float01(check_image_u8(img))).permute(2, 0, 1)[None]


def sr_forward(model, img):
    """Run the SR backbone on one uint8 RGB image; returns image + taps."""
    if img.shape[2] != 3:
        raise ValueError("SR backbone expects 3-channel images")
    model.eval()
    with torch.no_grad():
        image, taps = model(_to_tensor(img).to(next(model.parameters()).dtype),
                            return_taps=True)
    out = from_float01(image[0].permute(1, 2, 0).numpy())
    return SROutput(image=out, taps={k: v[0].numpy() for k, v in taps.items()})


def sr_then_downsample(model, img, final_size):
    """Two-step variant: super-resolve, then bicubic-resize to final_size."""
    up = sr_forward(model, img).image
    return degrade.resize(up, final_size, final_size, "bicubic")


def center_gaze_stub(sample, factor):
    """Restoration stand-in that re-renders the iris at a centered gaze.

    Only defined for synthetic samples carrying geometry metadata; models the
    failure mode of face-prior restoration that hallucinates a camera-facing
    gaze.
    """
    meta = getattr(sample, "geometry_meta", None) or (sample if isinstance(sample, dict) else None)
    if not meta:
        raise ValueError("center_gaze_stub needs synthetic geometry metadata")
    return synth.rerender_centered(meta, factor)


class TrainingError(RuntimeError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


@dataclasses.dataclass
class SRPretextConfig:
    steps: int = 500
    batch_size: int = 8
    learning_rate: float = 2e-4
    seed: int = 0
    patch_size: int = 24  # low-resolution patch side fed to the model


def train_sr_pretext(model, images, ranges, hyper):
    """Self-supervised SR pretext: degrade-and-restore with an L1 objective.

    Each step crops clean patches, degrades them down by the model's scale
    with freshly materialized recipes, and minimizes mean absolute pixel error
    between the restored patch and the clean one.  Fully seeded; returns the
    per-step loss curve.
    """
    if not images:
        raise ValueError("pretext training needs at least one image")
    images = [check_image_u8(im) for im in images]
    ranges.validate()
    scale = model.cfg.scale
    hr_patch = hyper.patch_size * scale
    for im in images:
        if im.shape[0] < hr_patch or im.shape[1] < hr_patch:
            raise ValueError(f"images must be at least {hr_patch}px for patch training")

    torch.manual_seed(hyper.seed)
    rng = np.random.default_rng(np.uint64(hyper.seed))
    opt = torch.optim.Adam(model.parameters(), lr=hyper.learning_rate)
    model.train()
    losses = []
    for step in range(hyper.steps):
        lr_batch, hr_batch = [], []
        for _ in range(hyper.batch_size):
            img = images[int(rng.integers(len(images)))]
            y0 = int(rng.integers(img.shape[0] - hr_patch + 1))
            x0 = int(rng.integers(img.shape[1] - hr_patch + 1))
            hr = img[y0:y0 + hr_patch, x0:x0 + hr_patch]
            recipe = degrade.sample_recipe(ranges, int(rng.integers(2 ** 63)))
            lr = degrade.complex_degrade(hr, recipe, target_size=(hyper.patch_size, hyper.patch_size))
            lr_batch.append(to_float01(lr))
            hr_batch.append(to_float01(hr))
        lr_t = torch.from_numpy(np.stack(lr_batch)).permute(0, 3, 1, 2)
        hr_t = torch.from_numpy(np.stack(hr_batch)).permute(0, 3, 1, 2)
        pred = model(lr_t)
        loss = (pred - hr_t).abs().mean()
        if not torch.isfinite(loss):
            raise TrainingError(f"non-finite pretext loss at step {step}", step=step)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
    model.eval()
    return losses
