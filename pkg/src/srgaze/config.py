"""Run configuration: a strict key-value schema loaded from YAML.

Unknown keys are a hard error (no silent typo acceptance).  Every section is
optional; defaults reproduce a small synthetic smoke setup.  The fully
resolved config is written beside each run's outputs.
"""

import json
from pathlib import Path

import yaml

from .degrade import DegradationRanges
from .harness import TrainConfig
from .models import GazeRegressorConfig, SuperVisionConfig
from .sr import SRBackboneConfig, SRPretextConfig


class ConfigError(ValueError):
    pass


# section -> {key: default}; None means "no default, optional"
SCHEMA = {
    "seed": 0,
    "out_dir": "runs",
    "synthetic": {"n_subjects": 3, "per_subject": 100, "image_size": 112},
    "dataset": {"root": None},
    "degradation": {
        "enabled": True,
        "blur_sigma": [0.2, 3.0], "rescale_factor": [1.0, 4.0],
        "noise_sigma": [0.004, 0.1], "jpeg_quality": [30, 95],
        "rescale_methods": ["nearest", "bilinear", "bicubic", "area"],
        "noise_modes": ["gray", "color"],
        "p_blur": 0.8, "p_rescale": 0.8, "p_noise": 0.8,
    },
    "sr": {
        "scale": 2, "embed_dim": 32, "num_groups": 2, "blocks_per_group": 2,
        "window_size": 8, "identity_init": True, "checkpoint": None,
    },
    "sr_pretext": {"steps": 500, "batch_size": 8, "learning_rate": 2e-4, "patch_size": 24},
    "model": {"kind": "simple_cnn", "input_size": 112, "head_hidden": 128, "dropout": 0.0},
    "supervision": {
        "sr_input_size": 56, "freeze_sr": False, "fusion_stage": 3,
        "fusion_mode": "project_add", "fusion_enabled": True,
    },
    "train": {
        "epochs": 10, "batch_size": 32, "learning_rate": 1e-3,
        "weight_decay": 1e-4, "epoch_selection": "best_test",
    },
    "experiment": {
        "preprocess": "interpolate", "low_res_size": 56,
        "fractions": [5, 10, 20], "size_pairs": [[56, 112]],
        "gaze_weights": None,
    },
}


def _merge(defaults, given, path=""):
    if not isinstance(given, dict):
        raise ConfigError(f"config section {path or '<root>'} must be a mapping")
    for key in given:
        if key not in defaults:
            raise ConfigError(f"unknown config key: {path + key}")
    out = {}
    for key, default in defaults.items():
        if isinstance(default, dict):
            out[key] = _merge(default, given.get(key, {}), path=f"{path}{key}.")
        else:
            out[key] = given.get(key, default)
    return out


class RunConfig:
    def __init__(self, resolved):
        self.resolved = resolved

    def __getitem__(self, key):
        return self.resolved[key]

    @classmethod
    def load(cls, path=None, overrides=None):
        given = {}
        if path is not None:
            given = yaml.safe_load(Path(path).read_text()) or {}
        resolved = _merge(SCHEMA, given)
        for key, value in (overrides or {}).items():
            if value is not None:
                resolved[key] = value
        return cls(resolved)

    def dump(self, path):
        Path(path).write_text(json.dumps(self.resolved, indent=2))

    @property
    def seed(self):
        return int(self.resolved["seed"])

    def degradation_ranges(self):
        d = self.resolved["degradation"]
        if not d["enabled"]:
            return None
        return DegradationRanges(
            blur_sigma=tuple(d["blur_sigma"]), rescale_factor=tuple(d["rescale_factor"]),
            noise_sigma=tuple(d["noise_sigma"]), jpeg_quality=tuple(d["jpeg_quality"]),
            rescale_methods=tuple(d["rescale_methods"]), noise_modes=tuple(d["noise_modes"]),
            p_blur=d["p_blur"], p_rescale=d["p_rescale"], p_noise=d["p_noise"],
        ).validate()

    def sr_config(self):
        s = self.resolved["sr"]
        return SRBackboneConfig(scale=s["scale"], embed_dim=s["embed_dim"],
                                num_groups=s["num_groups"],
                                blocks_per_group=s["blocks_per_group"],
                                window_size=s["window_size"]).validate()

    def sr_pretext_config(self):
        p = self.resolved["sr_pretext"]
        return SRPretextConfig(steps=p["steps"], batch_size=p["batch_size"],
                               learning_rate=p["learning_rate"],
                               patch_size=p["patch_size"], seed=self.seed)

    def model_config(self):
        m = self.resolved["model"]
        return GazeRegressorConfig(kind=m["kind"], input_size=m["input_size"],
                                   head_hidden=m["head_hidden"],
                                   dropout=m["dropout"]).validate()

    def supervision_config(self):
        s = self.resolved["supervision"]
        m = self.resolved["model"]
        head = GazeRegressorConfig(kind="resnet18", input_size=m["input_size"],
                                   head_hidden=m["head_hidden"], dropout=m["dropout"])
        return SuperVisionConfig(
            sr=self.sr_config(), sr_input_size=s["sr_input_size"],
            freeze_sr=s["freeze_sr"], fusion_stage=s["fusion_stage"],
            fusion_mode=s["fusion_mode"], fusion_enabled=s["fusion_enabled"],
            head=head).validate()

    def train_config(self):
        t = self.resolved["train"]
        return TrainConfig(epochs=t["epochs"], batch_size=t["batch_size"],
                           learning_rate=t["learning_rate"],
                           weight_decay=t["weight_decay"], seed=self.seed,
                           epoch_selection=t["epoch_selection"]).validate()
