"""Dataset ingestion, synthetic dataset generation, and split machinery.

On-disk layout (shared by the loader and the generator):

    root/
      subjects/<id>/images/*.png|jpg
      subjects/<id>/labels.csv        # filename,pitch_rad,yaw_rad
      subjects/<id>/geometry.jsonl    # optional, synthetic only

Sample order is always (subject_id, path), so dataset content hashes are
stable across runs and machines.
"""

import csv
import dataclasses
import hashlib
import json
from pathlib import Path

import cv2
import numpy as np

from . import synth

PROVENANCES = ("original", "degraded", "interpolated", "super_resolved",
               "sr_downsampled", "center_stub")


class LoadError(ValueError):
    """Raised when a dataset directory does not match the expected layout."""


@dataclasses.dataclass
class GazeSample:
    image_path: Path
    gaze: tuple  # (pitch, yaw) radians
    subject_id: str
    geometry_meta: dict = None
    provenance: str = "original"


@dataclasses.dataclass
class Dataset:
    samples: list
    name: str
    image_size: int

    def __len__(self):
        return len(self.samples)

    def subjects(self):
        return sorted({s.subject_id for s in self.samples})

    def by_subject(self, subject_ids):
        keep = set(subject_ids)
        return Dataset([s for s in self.samples if s.subject_id in keep],
                       name=self.name, image_size=self.image_size)

    def content_hash(self):
        """Hash of image bytes + labels, independent of where the tree lives."""
        h = hashlib.sha256()
        for s in self.samples:
            h.update(s.subject_id.encode())
            h.update(Path(s.image_path).name.encode())
            h.update(Path(s.image_path).read_bytes())
            h.update(np.asarray(s.gaze, dtype=np.float64).tobytes())
        return h.hexdigest()


@dataclasses.dataclass
class FoldPlan:
    folds: list  # [(train_subject_ids, test_subject_ids), ...]


def load_image(sample_or_path):
    """Read a sample's image as (H, W, 3) uint8 RGB."""
    path = getattr(sample_or_path, "image_path", sample_or_path)
    img = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if img is None:
        raise LoadError(f"cannot read image {path}")
    return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)


def _read_labels(csv_path, subject_id):
    labels = {}
    with open(csv_path, newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row or row[0] == "filename":
                continue
            if len(row) != 3:
                raise LoadError(f"subject {subject_id}: malformed label line {lineno} in {csv_path}")
            try:
                labels[row[0]] = (float(row[1]), float(row[2]))
            except ValueError:
                raise LoadError(f"subject {subject_id}: non-numeric label on line {lineno} in {csv_path}")
    return labels


def load_dataset(root, name=None):
    """Load a dataset in the layout above; errors name the offending file."""
    root = Path(root)
    subj_root = root / "subjects"
    if not subj_root.is_dir():
        raise LoadError(f"{root}: no subjects/ directory")
    subject_dirs = sorted(d for d in subj_root.iterdir() if d.is_dir())
    if not subject_dirs:
        raise LoadError(f"{root}: subjects/ is empty")

    samples = []
    size = None
    for sdir in subject_dirs:
        sid = sdir.name
        label_path = sdir / "labels.csv"
        if not label_path.is_file():
            raise LoadError(f"subject {sid}: missing labels.csv")
        labels = _read_labels(label_path, sid)
        geometry = {}
        geo_path = sdir / "geometry.jsonl"
        if geo_path.is_file():
            with open(geo_path) as f:
                for line in f:
                    rec = json.loads(line)
                    geometry[rec["filename"]] = rec["geometry"]
        img_dir = sdir / "images"
        images = sorted(p for p in img_dir.glob("*") if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
        if not images:
            raise LoadError(f"subject {sid}: no images under {img_dir}")
        for path in images:
            if path.name not in labels:
                raise LoadError(f"subject {sid}: no label row for image {path.name}")
            img = load_image(path)
            if img.shape[0] != img.shape[1]:
                raise LoadError(f"subject {sid}: non-square image {path.name}")
            if size is None:
                size = img.shape[0]
            elif img.shape[0] != size:
                raise LoadError(f"subject {sid}: image {path.name} has size {img.shape[0]}, expected {size}")
            samples.append(GazeSample(
                image_path=path, gaze=labels[path.name], subject_id=sid,
                geometry_meta=geometry.get(path.name), provenance="original"))
    return Dataset(samples=samples, name=name or root.name, image_size=size)


# alias for the published dataset's directory convention
load_mpii_layout = load_dataset


def generate_synthetic(n_subjects, per_subject, image_size, seed, out_dir):
    """Render a synthetic gaze dataset to disk and return the loaded Dataset.

    Deterministic in (n_subjects, per_subject, image_size, seed); images are
    PNG (lossless) so labels stay exact.
    """
    if n_subjects < 2:
        raise ValueError("need at least 2 subjects")
    if per_subject < 10:
        raise ValueError("need at least 10 images per subject")
    out_dir = Path(out_dir)
    for si in range(n_subjects):
        sid = f"s{si:02d}"
        sdir = out_dir / "subjects" / sid
        (sdir / "images").mkdir(parents=True, exist_ok=True)
        subj_rng = np.random.default_rng([seed, si])
        sp = synth.sample_subject_params(subj_rng)
        with open(sdir / "labels.csv", "w", newline="") as lf, \
                open(sdir / "geometry.jsonl", "w") as gf:
            writer = csv.writer(lf)
            writer.writerow(["filename", "pitch_rad", "yaw_rad"])
            for ii in range(per_subject):
                ip = synth.sample_image_params(np.random.default_rng([seed, si, ii]))
                img, geometry = synth.render_face(image_size, sp, ip)
                fname = f"{ii:05d}.png"
                cv2.imwrite(str(sdir / "images" / fname),
                            cv2.cvtColor(img, cv2.COLOR_RGB2BGR))
                writer.writerow([fname, repr(geometry["pitch"]), repr(geometry["yaw"])])
                gf.write(json.dumps({"filename": fname, "geometry": geometry}) + "\n")
    return load_dataset(out_dir, name=f"synthetic-{n_subjects}x{per_subject}")


def loso_splits(dataset):
    """One fold per subject: train on all others, test on that subject."""
    subjects = dataset.subjects()
    if len(subjects) < 2:
        raise ValueError("leave-one-subject-out needs at least 2 subjects")
    folds = [([s for s in subjects if s != held_out], [held_out])
             for held_out in subjects]
    return FoldPlan(folds=folds)


def fraction_subset(dataset, pct, seed):
    """Per-subject uniform subsample of round(pct%) of each subject's samples.

    Subsets are nested for a fixed seed: the 5% subset is a prefix of the 10%
    subset, which is a prefix of the 20% subset.
    """
    if pct not in (5, 10, 20, 100):
        raise ValueError(f"pct must be one of 5, 10, 20, 100; got {pct}")
    if pct == 100:
        return Dataset(list(dataset.samples), name=dataset.name, image_size=dataset.image_size)
    chosen = []
    for sid in dataset.subjects():
        subj_samples = [s for s in dataset.samples if s.subject_id == sid]
        n_keep = int(round(len(subj_samples) * pct / 100.0))
        if n_keep < 1:
            raise ValueError(f"pct {pct} yields zero samples for subject {sid}")
        rng = np.random.default_rng([seed, int(hashlib.sha256(sid.encode()).hexdigest()[:8], 16)])
        order = rng.permutation(len(subj_samples))
        chosen.extend(subj_samples[i] for i in sorted(order[:n_keep]))
    return Dataset(chosen, name=f"{dataset.name}-{pct}pct", image_size=dataset.image_size)
