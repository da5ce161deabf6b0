"""Training loops, LOSO evaluation, table-style experiment runners, probes.

Preprocessed dataset variants are materialized to disk once, keyed by a
content hash of (input dataset, pipeline parameters, seed, codec), so every
experiment is auditable and re-derivable from its report.
"""

import copy
import dataclasses
import hashlib
import json
import platform
import shutil
from pathlib import Path

import cv2
import numpy as np
import torch

from . import data as data_mod
from . import degrade as degrade_mod
from . import models as models_mod
from . import sr as sr_mod
from . import synth
from .geometry import mean_angular_error, angular_error_deg
from .sr import TrainingError


def environment_fingerprint(seed=None):
    return {
        "jpeg_codec": degrade_mod.codec_fingerprint(),
        "numpy": np.__version__,
        "torch": torch.__version__,
        "platform": platform.platform(),
        "seed": seed,
    }


def derive_seed(master, *indices):
    """Stable child seed from a master seed and an index path."""
    h = hashlib.sha256(json.dumps([int(master), *[int(i) for i in indices]]).encode())
    return int.from_bytes(h.digest()[:8], "little") % (2 ** 62)


@dataclasses.dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adamw"
    weight_decay: float = 1e-4
    seed: int = 0
    epoch_selection: str = "best_test"  # or "final"
    device: str = "cpu"

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.optimizer != "adamw":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")
        if self.epoch_selection not in ("best_test", "final"):
            raise ValueError(f"unknown epoch_selection {self.epoch_selection!r}")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)


def load_arrays(dataset):
    """Load a Dataset into (images list, gaze (N, 2), subject ids)."""
    images = [data_mod.load_image(s) for s in dataset.samples]
    gaze = np.array([s.gaze for s in dataset.samples], dtype=np.float64)
    subjects = [s.subject_id for s in dataset.samples]
    return images, gaze, subjects


def train_gaze(model, trainset, testset, cfg: TrainConfig):
    """Train a gaze regressor; returns (model, curves).

    Curves carry per-epoch train loss and test POG, the untrained test POG
    (epoch 0), and the epoch numbers of both selection policies.  The model is
    left holding the weights chosen by cfg.epoch_selection.
    """
    cfg.validate()
    if len(trainset) == 0 or len(testset) == 0:
        raise ValueError("train and test sets must be nonempty")
    test_subjects = set(testset.subjects())
    if test_subjects & set(trainset.subjects()):
        raise ValueError("train and test subject sets overlap")

    train_images, train_gaze_arr, train_subj = load_arrays(trainset)
    test_images, test_gaze_arr, _ = load_arrays(testset)
    gaze_t = torch.from_numpy(train_gaze_arr.astype(np.float32))

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(np.uint64(cfg.seed))
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.AdamW(params, lr=max(cfg.learning_rate, 1e-30),
                            weight_decay=cfg.weight_decay)

    def test_pog():
        pred = models_mod.predict_gaze(model, test_images)
        return mean_angular_error(pred, test_gaze_arr)

    curves = {"train_loss": [], "test_pog": [], "epoch0_pog": test_pog()}
    best_pog, best_epoch, best_state = np.inf, 0, None
    n = len(train_images)
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            # structural no-leakage assertion: held-out subjects never train
            batch_subjects = {train_subj[i] for i in idx}
            if batch_subjects & test_subjects:
                raise AssertionError("test subject leaked into a training batch")
            x = models_mod.images_to_tensor([train_images[i] for i in idx])
            loss = models_mod.gaze_loss(model(x), gaze_t[idx])
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}")
            if cfg.learning_rate > 0:
                opt.zero_grad()
                loss.backward()
                opt.step()
            epoch_losses.append(float(loss.detach()))
        curves["train_loss"].append(float(np.mean(epoch_losses)))
        pog = test_pog()
        curves["test_pog"].append(pog)
        if pog < best_pog:
            best_pog, best_epoch = pog, epoch
            best_state = copy.deepcopy(model.state_dict())
    curves["best_epoch"] = best_epoch
    curves["final_epoch"] = cfg.epochs
    curves["pog_final"] = curves["test_pog"][-1]
    curves["pog_best"] = best_pog if np.isfinite(best_pog) else curves["epoch0_pog"]
    if cfg.epoch_selection == "best_test" and best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return model, curves


@dataclasses.dataclass
class PipelineSpec:
    """Names one preprocessing route plus the gaze model that consumes it."""

    preprocess: str = "none"  # none|interpolate|sr|sr_downsample|center_stub|supervision
    model: object = dataclasses.field(default_factory=models_mod.GazeRegressorConfig)
    degradation: object = None  # DegradationRanges or None
    low_res_size: int = 56
    sr_cfg: object = None  # SRBackboneConfig, for sr/sr_downsample routes
    sr_checkpoint: str = None
    sr_identity_init: bool = True
    upscale_method: str = "bicubic"
    name: str = ""

    PREPROCESS_KINDS = ("none", "interpolate", "sr", "sr_downsample", "center_stub", "supervision")

    def validate(self):
        if self.preprocess not in self.PREPROCESS_KINDS:
            raise ValueError(f"unknown preprocess kind {self.preprocess!r}")
        self.model.validate()
        if self.preprocess == "supervision" and not isinstance(self.model, models_mod.SuperVisionConfig):
            raise ValueError("supervision preprocessing requires a SuperVisionConfig model")
        if self.preprocess in ("sr", "sr_downsample") and self.sr_cfg is None:
            raise ValueError(f"{self.preprocess} preprocessing needs sr_cfg")
        if self.degradation is not None:
            self.degradation.validate()
        return self

    @property
    def model_input_size(self):
        if isinstance(self.model, models_mod.SuperVisionConfig):
            return self.model.sr_input_size
        return self.model.input_size

    def describe(self):
        d = {
            "name": self.name, "preprocess": self.preprocess,
            "low_res_size": self.low_res_size,
            "model_input_size": self.model_input_size,
            "upscale_method": self.upscale_method,
            "model": self.model.to_dict(),
            "degradation": dataclasses.asdict(self.degradation) if self.degradation else None,
            "sr_cfg": self.sr_cfg.to_dict() if self.sr_cfg else None,
            "sr_checkpoint": str(self.sr_checkpoint) if self.sr_checkpoint else None,
            "sr_identity_init": self.sr_identity_init,
        }
        for key in ("degradation", "sr_cfg"):
            if isinstance(d[key], dict):
                d[key] = {k: list(v) if isinstance(v, tuple) else v for k, v in d[key].items()}
        return d

    def build_sr(self):
        from .checkpoint import load_checkpoint
        model = sr_mod.build_sr_backbone(self.sr_cfg, seed=0,
                                         identity_init=self.sr_identity_init)
        if self.sr_checkpoint:
            load_checkpoint(self.sr_checkpoint, module=model)
        return model

    def build_model(self, seed):
        if isinstance(self.model, models_mod.SuperVisionConfig):
            sr_backbone = None
            if self.sr_checkpoint:
                from .checkpoint import load_checkpoint
                torch.manual_seed(seed)
                sr_backbone = sr_mod.SRBackbone(self.model.sr)
                load_checkpoint(self.sr_checkpoint, module=sr_backbone)
            return models_mod.build_supervision(self.model, seed=seed, sr_backbone=sr_backbone)
        return models_mod.build_regressor(self.model, seed=seed)


def preprocess_dataset(dataset, spec: PipelineSpec, master_seed, cache_root):
    """Materialize the preprocessed variant of a dataset, cached on disk.

    Returns (variant Dataset, cache key, warnings).  The cache key hashes the
    input dataset content, the pipeline description, the seed, and the JPEG
    codec fingerprint; per-image degradation recipes are written beside the
    images so any output is re-derivable.
    """
    spec.validate()
    cache_root = Path(cache_root)
    key_src = json.dumps({
        "dataset": dataset.content_hash(),
        "spec": spec.describe(),
        "seed": int(master_seed),
        "codec": degrade_mod.codec_fingerprint(),
    }, sort_keys=True)
    key = hashlib.sha256(key_src.encode()).hexdigest()[:16]
    out_dir = cache_root / f"variant-{key}"
    marker = out_dir / "_COMPLETE"
    warnings = []
    if marker.is_file():
        try:
            return data_mod.load_dataset(out_dir, name=f"{dataset.name}-{spec.preprocess}"), key, warnings
        except (data_mod.LoadError, OSError) as e:
            warnings.append(f"cache {key} corrupt ({e}); rebuilding")
    if out_dir.exists():
        shutil.rmtree(out_dir)

    sr_backbone = None
    if spec.preprocess in ("sr", "sr_downsample"):
        sr_backbone = spec.build_sr()

    target = spec.model_input_size
    low = spec.low_res_size
    recipes = []
    for idx, sample in enumerate(dataset.samples):
        img = data_mod.load_image(sample)
        provenance = "original"
        if spec.degradation is not None:
            recipe = degrade_mod.sample_recipe(spec.degradation, derive_seed(master_seed, idx))
            img = degrade_mod.complex_degrade(img, recipe, target_size=(low, low))
            recipes.append({"path": str(sample.image_path), "recipe": recipe.to_dict()})
            provenance = "degraded"
        elif img.shape[0] != low:
            img = degrade_mod.resize(img, low, low, spec.upscale_method)
            provenance = "degraded"

        if spec.preprocess == "interpolate":
            img = degrade_mod.resize(img, target, target, spec.upscale_method)
            provenance = "interpolated"
        elif spec.preprocess == "sr":
            img = sr_mod.sr_forward(sr_backbone, img).image
            if img.shape[0] != target:
                img = degrade_mod.resize(img, target, target, "bicubic")
            provenance = "super_resolved"
        elif spec.preprocess == "sr_downsample":
            img = sr_mod.sr_then_downsample(sr_backbone, img, target)
            provenance = "sr_downsampled"
        elif spec.preprocess == "center_stub":
            if not sample.geometry_meta:
                raise ValueError(f"center_stub needs geometry metadata ({sample.image_path})")
            img = synth.rerender_centered(sample.geometry_meta, size=target)
            provenance = "center_stub"
        elif spec.preprocess == "none" and img.shape[0] != target:
            img = degrade_mod.resize(img, target, target, "bicubic")

        sdir = out_dir / "subjects" / sample.subject_id
        (sdir / "images").mkdir(parents=True, exist_ok=True)
        fname = Path(sample.image_path).name.rsplit(".", 1)[0] + ".png"
        cv2.imwrite(str(sdir / "images" / fname), cv2.cvtColor(img, cv2.COLOR_RGB2BGR))
        with open(sdir / "labels.csv", "a", newline="") as f:
            f.write(f"{fname},{sample.gaze[0]!r},{sample.gaze[1]!r}\n")
        if sample.geometry_meta:
            with open(sdir / "geometry.jsonl", "a") as f:
                f.write(json.dumps({"filename": fname, "geometry": sample.geometry_meta}) + "\n")

    if recipes:
        with open(out_dir / "recipes.jsonl", "w") as f:
            for rec in recipes:
                f.write(json.dumps(rec) + "\n")
    (out_dir / "variant.json").write_text(key_src)
    marker.write_text("ok")
    variant = data_mod.load_dataset(out_dir, name=f"{dataset.name}-{spec.preprocess}")
    for orig, new in zip(dataset.samples, variant.samples):
        new.provenance = spec.preprocess
        new.geometry_meta = orig.geometry_meta
    return variant, key, warnings


@dataclasses.dataclass
class EvalReport:
    experiment_id: str
    pipeline: dict
    folds: list  # per fold: subject, pog_best, pog_final, best_epoch, final_epoch
    mean_pog: float
    mean_pog_best: float
    mean_pog_final: float
    train_config: dict
    environment: dict
    cache_key: str = ""
    warnings: list = dataclasses.field(default_factory=list)
    reference: dict = dataclasses.field(default_factory=dict)

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def run_loso(dataset, spec: PipelineSpec, cfg: TrainConfig, workdir, reference=None):
    """Leave-one-subject-out evaluation of one pipeline; returns an EvalReport."""
    spec.validate()
    cfg.validate()
    workdir = Path(workdir)
    variant, cache_key, warnings = preprocess_dataset(
        dataset, spec, master_seed=cfg.seed, cache_root=workdir / "cache")
    plan = data_mod.loso_splits(variant)
    folds = []
    interrupted = None
    for fold_idx, (train_ids, test_ids) in enumerate(plan.folds):
        fold_seed = derive_seed(cfg.seed, fold_idx)
        model = spec.build_model(seed=fold_seed)
        fold_cfg = dataclasses.replace(cfg, seed=fold_seed)
        try:
            _, curves = train_gaze(model, variant.by_subject(train_ids),
                                   variant.by_subject(test_ids), fold_cfg)
        except KeyboardInterrupt as e:
            # leave a valid partial report noting the completed folds
            warnings.append(f"interrupted after {len(folds)} of {len(plan.folds)} folds")
            interrupted = e
            break
        folds.append({
            "subject": test_ids[0],
            "pog_best": curves["pog_best"],
            "pog_final": curves["pog_final"],
            "best_epoch": curves["best_epoch"],
            "final_epoch": curves["final_epoch"],
            "epoch0_pog": curves["epoch0_pog"],
            "test_pog_curve": curves["test_pog"],
            "train_loss_curve": curves["train_loss"],
        })
    policy_key = "pog_best" if cfg.epoch_selection == "best_test" else "pog_final"
    mean_best = float(np.mean([f["pog_best"] for f in folds])) if folds else float("nan")
    mean_final = float(np.mean([f["pog_final"] for f in folds])) if folds else float("nan")
    report = EvalReport(
        experiment_id=f"{spec.name or spec.preprocess}-{cache_key}-seed{cfg.seed}",
        pipeline=spec.describe(),
        folds=folds,
        mean_pog=float(np.mean([f[policy_key] for f in folds])) if folds else float("nan"),
        mean_pog_best=mean_best,
        mean_pog_final=mean_final,
        train_config=cfg.to_dict(),
        environment=environment_fingerprint(seed=cfg.seed),
        cache_key=cache_key,
        warnings=warnings,
        reference=reference or {},
    )
    out = workdir / "reports"
    out.mkdir(parents=True, exist_ok=True)
    report.to_json(out / f"{report.experiment_id}.json")
    if interrupted is not None:
        raise interrupted
    return report


# Reference POG numbers from full-scale (45k-image, pretrained-backbone)
# training runs; NOT reproducible at desk scale, recorded in reports as
# metadata only.
REFERENCE_FULL_SCALE = {
    "table1": {
        "none/interpolate": 4.20, "none/sr": 4.11,
        "degraded/interpolate": 5.47, "degraded/sr": 5.10,
    },
    "table2": {"sr_downsample_2x": 3.94, "sr_2x": 3.90, "strong_baseline": 4.00},
    "table3": {
        "no_pretrain/interpolate/56": 4.81, "no_pretrain/sr/56": 4.76,
        "no_pretrain/interpolate/112": 4.53, "no_pretrain/sr/112": 4.48,
        "pretrain/interpolate/56": 4.31, "pretrain/sr/56": 4.22,
        "pretrain/interpolate/112": 4.24, "pretrain/sr/112": 4.21,
    },
    "table4": {
        "no_pretrain/interpolate": 5.40, "no_pretrain/sr": 5.33,
        "pretrain/interpolate": 5.37, "pretrain/sr": 5.20,
    },
    "table5": {
        "interpolate": {5: 6.26, 10: 6.06, 20: 6.04},
        "sr_downsample": {5: 6.20, 10: 6.01, 20: 5.91},
        "supervision": {5: 6.17, 10: 5.90, 20: 4.54},
    },
}


def run_table1_style(dataset, cfg, workdir, make_spec):
    """SR-vs-interpolation grid: {interpolate, sr, center_stub} x {clean, degraded}.

    make_spec(preprocess, degraded) -> PipelineSpec builds each cell at the
    caller's chosen scale.
    """
    reports = []
    for degraded in (False, True):
        for preprocess in ("interpolate", "sr", "center_stub"):
            spec = make_spec(preprocess, degraded)
            track = "degraded" if degraded else "none"
            spec.name = f"table1/{track}/{preprocess}"
            ref = {"full_scale_pog_deg": REFERENCE_FULL_SCALE["table1"].get(f"{track}/{preprocess}")}
            reports.append(run_loso(dataset, spec, cfg, workdir, reference=ref))
    return reports


def run_table3_style(dataset, cfg, workdir, make_spec, size_pairs):
    """Low-resolution track: {interpolate, sr} across (input, gaze) size pairs."""
    reports = []
    for low, gaze_size in size_pairs:
        for preprocess in ("interpolate", "sr"):
            spec = make_spec(preprocess, low, gaze_size)
            spec.name = f"table3/{preprocess}/{low}-{gaze_size}"
            ref = {"full_scale_pog_deg": REFERENCE_FULL_SCALE["table3"].get(
                f"no_pretrain/{preprocess}/{low}")}
            reports.append(run_loso(dataset, spec, cfg, workdir, reference=ref))
    return reports


def run_table5_style(dataset, cfg, workdir, make_spec, fractions=(5, 10, 20)):
    """Label-fraction grid: {interpolate, sr_downsample, supervision} x fractions.

    Subsets are nested per seed, so each pipeline's learning curve is
    monotone-comparable across fractions.
    """
    reports = []
    for preprocess in ("interpolate", "sr_downsample", "supervision"):
        for pct in fractions:
            subset = data_mod.fraction_subset(dataset, pct, seed=cfg.seed)
            spec = make_spec(preprocess)
            spec.name = f"table5/{preprocess}/{pct}pct"
            ref = {"full_scale_pog_deg": REFERENCE_FULL_SCALE["table5"][preprocess].get(pct),
                   "fraction_pct": pct}
            reports.append(run_loso(subset, spec, cfg, workdir, reference=ref))
    return reports


@dataclasses.dataclass
class ProbeReport:
    mean_shift_deg: float
    centering_score: float
    shift_histogram: dict  # {"bin_edges_deg": [...], "counts": [...]}
    n_samples: int

    def to_dict(self):
        return dataclasses.asdict(self)


def gaze_preservation_probe(gaze_model, original_ds, restored_ds):
    """Quantify gaze drift introduced by a restoration front end.

    mean_shift_deg: mean angular difference between predictions on original
    vs restored images.  centering_score: 1 - (mean predicted gaze magnitude
    on restored) / (mean on original); near 1 means the restoration collapsed
    predictions toward a centered gaze.
    """
    orig_by_name = {(s.subject_id, Path(s.image_path).name): s for s in original_ds.samples}
    rest_by_name = {(s.subject_id, Path(s.image_path).name): s for s in restored_ds.samples}
    if set(orig_by_name) != set(rest_by_name):
        raise ValueError("original and restored datasets are not paired by subject/filename")
    names = sorted(orig_by_name)
    orig_imgs = [data_mod.load_image(orig_by_name[n]) for n in names]
    rest_imgs = [data_mod.load_image(rest_by_name[n]) for n in names]
    pred_orig = models_mod.predict_gaze(gaze_model, orig_imgs)
    pred_rest = models_mod.predict_gaze(gaze_model, rest_imgs)
    shifts = angular_error_deg(pred_orig, pred_rest)
    mag_orig = float(np.mean(np.linalg.norm(pred_orig, axis=1)))
    mag_rest = float(np.mean(np.linalg.norm(pred_rest, axis=1)))
    centering = 1.0 - (mag_rest / mag_orig if mag_orig > 0 else 1.0)
    counts, edges = np.histogram(shifts, bins=18, range=(0.0, 90.0))
    return ProbeReport(
        mean_shift_deg=float(np.mean(shifts)),
        centering_score=float(centering),
        shift_histogram={"bin_edges_deg": edges.tolist(), "counts": counts.tolist()},
        n_samples=len(names),
    )
