"""Gaze regressors: a compact CNN, a ResNet18-style network, and SuperVision.

SuperVision runs the SR backbone, feeds its (resized) output image into the
ResNet trunk, and injects the SR feature taps into a chosen trunk stage
through learned 1x1 projections.  With project_add fusion, zeroing the
projection weights reduces the model exactly to the plain SR->ResNet pipeline.
"""

import dataclasses

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .geometry import PITCH_LIMIT, YAW_LIMIT
from .imutils import check_image_u8, to_float01
from .sr import SRBackbone, SRBackboneConfig

VALID_INPUT_SIZES = (56, 112, 224, 448)
MODEL_KINDS = ("simple_cnn", "resnet18", "supervision")


@dataclasses.dataclass(frozen=True)
class GazeRegressorConfig:
    kind: str = "simple_cnn"
    input_size: int = 112
    head_hidden: int = 128
    dropout: float = 0.0

    def validate(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.input_size not in VALID_INPUT_SIZES:
            raise ValueError(f"input_size must be one of {VALID_INPUT_SIZES}, got {self.input_size}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)


class SimpleCNN(nn.Module):
    def __init__(self, cfg: GazeRegressorConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.input_size = cfg.input_size
        chans = (16, 32, 64)
        layers = []
        prev = 3
        for c in chans:
            layers += [nn.Conv2d(prev, c, 3, stride=2, padding=1),
                       nn.BatchNorm2d(c), nn.ReLU(inplace=True)]
            prev = c
        self.features = nn.Sequential(*layers)
        self.head = nn.Sequential(
            nn.AdaptiveAvgPool2d(1), nn.Flatten(),
            nn.Linear(prev, cfg.head_hidden), nn.ReLU(inplace=True),
            nn.Dropout(cfg.dropout), nn.Linear(cfg.head_hidden, 2))

    def forward(self, x):
        return self.head(self.features(x))


class BasicBlock(nn.Module):
    def __init__(self, in_ch, out_ch, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.down = None
        if stride != 1 or in_ch != out_ch:
            self.down = nn.Sequential(nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                                      nn.BatchNorm2d(out_ch))

    def forward(self, x):
        identity = self.down(x) if self.down is not None else x
        y = F.relu(self.bn1(self.conv1(x)), inplace=True)
        y = self.bn2(self.conv2(y))
        return F.relu(y + identity, inplace=True)


class ResNet18Gaze(nn.Module):
    """4-stage residual trunk (2 blocks per stage) with a small regression head.

    Stage inputs have 64/64/128/256 channels; an optional fuse_fn hook runs on
    the activation entering the chosen stage, which is where SuperVision
    injects its SR taps.
    """

    STAGE_IN_CHANNELS = {1: 64, 2: 64, 3: 128, 4: 256}

    def __init__(self, cfg: GazeRegressorConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.input_size = cfg.input_size
        self.stem = nn.Sequential(
            nn.Conv2d(3, 64, 7, stride=2, padding=3, bias=False),
            nn.BatchNorm2d(64), nn.ReLU(inplace=True),
            nn.MaxPool2d(3, stride=2, padding=1))
        chans = (64, 128, 256, 512)
        stages = []
        prev = 64
        for i, c in enumerate(chans):
            stride = 1 if i == 0 else 2
            stages.append(nn.Sequential(BasicBlock(prev, c, stride), BasicBlock(c, c)))
            prev = c
        self.stages = nn.ModuleList(stages)
        self.head = nn.Sequential(
            nn.AdaptiveAvgPool2d(1), nn.Flatten(),
            nn.Linear(512, cfg.head_hidden), nn.ReLU(inplace=True),
            nn.Dropout(cfg.dropout), nn.Linear(cfg.head_hidden, 2))

    def forward(self, x, fuse_fn=None, fuse_stage=3):
        x = self.stem(x)
        for i, stage in enumerate(self.stages, start=1):
            if fuse_fn is not None and i == fuse_stage:
                x = fuse_fn(x)
            x = stage(x)
        return self.head(x)


@dataclasses.dataclass(frozen=True)
class SuperVisionConfig:
    sr: SRBackboneConfig = dataclasses.field(default_factory=SRBackboneConfig)
    sr_input_size: int = 112
    freeze_sr: bool = False
    fusion_stage: int = 3
    fusion_mode: str = "project_add"
    fusion_enabled: bool = True
    head: GazeRegressorConfig = dataclasses.field(
        default_factory=lambda: GazeRegressorConfig(kind="resnet18", input_size=224))

    def validate(self):
        self.sr.validate()
        self.head.validate()
        if self.head.kind != "resnet18":
            raise ValueError("SuperVision head must be resnet18")
        if self.fusion_mode not in ("project_add", "project_concat"):
            raise ValueError(f"unknown fusion_mode {self.fusion_mode!r}")
        if self.fusion_stage not in (1, 2, 3, 4):
            raise ValueError(f"fusion_stage must be 1..4, got {self.fusion_stage}")
        if self.sr.scale * self.sr_input_size < self.head.input_size:
            raise ValueError(
                f"SR output {self.sr.scale * self.sr_input_size} is smaller than "
                f"head input {self.head.input_size}")
        return self

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["sr"] = self.sr.to_dict()
        d["head"] = self.head.to_dict()
        return d


class SuperVision(nn.Module):
    def __init__(self, cfg: SuperVisionConfig, sr_backbone=None):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.input_size = cfg.sr_input_size
        self.sr = sr_backbone if sr_backbone is not None else SRBackbone(cfg.sr)
        if sr_backbone is not None and sr_backbone.cfg != cfg.sr:
            raise ValueError("supplied SR backbone does not match cfg.sr")
        self.head = ResNet18Gaze(cfg.head)
        stage_ch = ResNet18Gaze.STAGE_IN_CHANNELS[cfg.fusion_stage]
        dim = cfg.sr.embed_dim
        self.proj_shallow = nn.Conv2d(dim, stage_ch, 1)
        self.proj_deep = nn.Conv2d(dim, stage_ch, 1)
        if cfg.fusion_mode == "project_concat":
            self.merge = nn.Conv2d(3 * stage_ch, stage_ch, 1)
        if cfg.freeze_sr:
            for p in self.sr.parameters():
                p.requires_grad_(False)

    def zero_fusion(self):
        """Zero both tap projections; in project_add mode this disables fusion."""
        for conv in (self.proj_shallow, self.proj_deep):
            nn.init.zeros_(conv.weight)
            nn.init.zeros_(conv.bias)
        return self

    def _fuse(self, taps):
        def fuse_fn(x):
            size = x.shape[-2:]
            ps = self.proj_shallow(F.interpolate(taps["shallow"], size=size,
                                                 mode="bilinear", align_corners=False))
            pd = self.proj_deep(F.interpolate(taps["deep"], size=size,
                                              mode="bilinear", align_corners=False))
            if self.cfg.fusion_mode == "project_add":
                return x + ps + pd
            return self.merge(torch.cat([x, ps, pd], dim=1))
        return fuse_fn

    def forward(self, x):
        sr_image, taps = self.sr(x, return_taps=True)
        head_in = F.interpolate(sr_image, size=(self.cfg.head.input_size,) * 2,
                                mode="bicubic", align_corners=False)
        fuse_fn = self._fuse(taps) if self.cfg.fusion_enabled else None
        return self.head(head_in, fuse_fn=fuse_fn, fuse_stage=self.cfg.fusion_stage)


def build_regressor(cfg: GazeRegressorConfig, seed=0):
    """Deterministically initialized gaze regressor of the configured kind."""
    cfg.validate()
    torch.manual_seed(seed)
    if cfg.kind == "simple_cnn":
        return SimpleCNN(cfg)
    if cfg.kind == "resnet18":
        return ResNet18Gaze(cfg)
    raise ValueError("use build_supervision for the supervision kind")


def build_supervision(cfg: SuperVisionConfig, seed=0, sr_backbone=None):
    cfg.validate()
    torch.manual_seed(seed)
    return SuperVision(cfg, sr_backbone=sr_backbone)


def gaze_loss(pred, gt):
    """Mean absolute error over both angle components."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    return (pred - gt).abs().mean()


def images_to_tensor(images):
    """Stack uint8 RGB images into a (N, 3, H, W) float tensor in [0, 1]."""
    arr = np.stack([to_float01(check_image_u8(im)) for im in images])
    return torch.from_numpy(arr).permute(0, 3, 1, 2)


def predict_gaze(model, images, batch_size=64):
    """Inference-mode gaze prediction, clamped to the valid angle ranges."""
    if len(images) == 0:
        return np.zeros((0, 2))
    for im in images:
        if im.shape[0] != model.input_size or im.shape[1] != model.input_size:
            raise ValueError(f"image size {im.shape[:2]} does not match model "
                             f"input size {model.input_size}")
    model.eval()
    outs = []
    with torch.no_grad():
        for i in range(0, len(images), batch_size):
            batch = images_to_tensor(images[i:i + batch_size])
            outs.append(model(batch).numpy())
    pred = np.concatenate(outs, axis=0).astype(np.float64)
    pred[:, 0] = np.clip(pred[:, 0], -PITCH_LIMIT, PITCH_LIMIT)
    pred[:, 1] = np.clip(pred[:, 1], -YAW_LIMIT, YAW_LIMIT)
    return pred
