import dataclasses
import json
from pathlib import Path

import numpy as np
import pytest

from srgaze import checkpoint, data as data_mod, harness, models
from srgaze.degrade import DegradationRanges
from srgaze.harness import (EvalReport, PipelineSpec, TrainConfig, derive_seed,
                            gaze_preservation_probe, preprocess_dataset, run_loso,
                            train_gaze)
from srgaze.models import GazeRegressorConfig, build_regressor
from srgaze.sr import SRBackboneConfig

CNN56 = GazeRegressorConfig(kind="simple_cnn", input_size=56)


class TestDeriveSeed:
    def test_deterministic(self):
        assert derive_seed(0, 1, 2) == derive_seed(0, 1, 2)

    def test_index_sensitive(self):
        seeds = {derive_seed(0), derive_seed(0, 0), derive_seed(0, 1), derive_seed(1, 0)}
        assert len(seeds) == 4

    def test_range(self):
        for s in (derive_seed(0), derive_seed(2**61, 5, 7)):
            assert 0 <= s < 2**62


class TestTrainGaze:
    def split(self, ds):
        subjects = ds.subjects()
        return ds.by_subject(subjects[:-1]), ds.by_subject(subjects[-1:])

    def test_zero_lr_leaves_weights_and_curves_flat(self, tiny_dataset):
        import torch
        train, test = self.split(tiny_dataset)
        model = build_regressor(CNN56, seed=0)
        before = {k: v.clone() for k, v in model.named_parameters()}
        # one batch per epoch so the epoch-mean loss is permutation invariant
        cfg = TrainConfig(epochs=3, batch_size=64, learning_rate=0.0, seed=0,
                          epoch_selection="final")
        _, curves = train_gaze(model, train, test, cfg)
        for k, v in model.named_parameters():
            assert torch.equal(v, before[k]), k
        # within-batch sample order still permutes, so losses match only up
        # to float accumulation order
        assert curves["train_loss"] == pytest.approx(
            [curves["train_loss"][0]] * 3, abs=1e-5)

    def test_subject_overlap_rejected(self, tiny_dataset):
        subjects = tiny_dataset.subjects()
        model = build_regressor(CNN56, seed=0)
        with pytest.raises(ValueError, match="overlap"):
            train_gaze(model, tiny_dataset, tiny_dataset.by_subject(subjects[:1]),
                       TrainConfig(epochs=1))

    def test_epoch_selection_policies(self, tiny_dataset):
        train, test = self.split(tiny_dataset)
        test_images, test_gaze, _ = harness.load_arrays(test)

        def pog_of(model):
            pred = models.predict_gaze(model, test_images)
            return harness.mean_angular_error(pred, test_gaze)

        for policy, key in (("best_test", "pog_best"), ("final", "pog_final")):
            model = build_regressor(CNN56, seed=1)
            _, curves = train_gaze(model, train, test,
                                   TrainConfig(epochs=3, seed=1, epoch_selection=policy))
            assert pog_of(model) == pytest.approx(curves[key], abs=1e-9)
        assert curves["pog_best"] == min(curves["test_pog"])

    def test_same_seed_reproduces(self, tiny_dataset):
        train, test = self.split(tiny_dataset)
        hashes, all_curves = [], []
        for _ in range(2):
            model = build_regressor(CNN56, seed=2)
            _, curves = train_gaze(model, train, test, TrainConfig(epochs=2, seed=2))
            hashes.append(checkpoint.weights_hash(model))
            all_curves.append(curves)
        assert hashes[0] == hashes[1]
        assert all_curves[0] == all_curves[1]


class TestPreprocessDataset:
    def spec(self, **kw):
        return PipelineSpec(model=CNN56, low_res_size=28, **kw)

    def test_interpolate_variant_and_cache_reuse(self, tiny_dataset, tmp_path):
        spec = self.spec(preprocess="interpolate")
        v1, key1, w1 = preprocess_dataset(tiny_dataset, spec, 0, tmp_path)
        assert w1 == []
        assert len(v1) == len(tiny_dataset)
        img = data_mod.load_image(v1.samples[0])
        assert img.shape == (56, 56, 3)
        # labels survive the rewrite
        assert v1.samples[0].gaze == tiny_dataset.samples[0].gaze
        v2, key2, w2 = preprocess_dataset(tiny_dataset, spec, 0, tmp_path)
        assert key2 == key1 and w2 == []
        assert v2.content_hash() == v1.content_hash()

    def test_cache_key_depends_on_spec_and_seed(self, tiny_dataset, tmp_path):
        base = self.spec(preprocess="interpolate")
        _, k1, _ = preprocess_dataset(tiny_dataset, base, 0, tmp_path)
        _, k2, _ = preprocess_dataset(tiny_dataset, base, 1, tmp_path)
        _, k3, _ = preprocess_dataset(
            tiny_dataset, self.spec(preprocess="interpolate", upscale_method="bilinear"),
            0, tmp_path)
        assert len({k1, k2, k3}) == 3

    def test_corrupt_cache_rebuilds_with_warning(self, tiny_dataset, tmp_path):
        spec = self.spec(preprocess="interpolate")
        _, key, _ = preprocess_dataset(tiny_dataset, spec, 0, tmp_path)
        out = tmp_path / f"variant-{key}"
        (out / "subjects" / tiny_dataset.subjects()[0] / "labels.csv").unlink()
        v, key2, warnings = preprocess_dataset(tiny_dataset, spec, 0, tmp_path)
        assert key2 == key
        assert any("rebuilding" in w for w in warnings)
        assert len(v) == len(tiny_dataset)

    def test_degradation_writes_recipes_sidecar(self, tiny_dataset, tmp_path):
        spec = self.spec(preprocess="interpolate", degradation=DegradationRanges())
        _, key, _ = preprocess_dataset(tiny_dataset, spec, 7, tmp_path)
        lines = (tmp_path / f"variant-{key}" / "recipes.jsonl").read_text().splitlines()
        assert len(lines) == len(tiny_dataset)
        rec = json.loads(lines[0])["recipe"]
        assert set(rec) >= {"stage_order", "rescale_factor", "jpeg_quality"}

    def test_identity_sr_route_matches_interpolation_closely(self, tiny_dataset, tmp_path):
        from srgaze.imutils import psnr_db
        sr_cfg = SRBackboneConfig(scale=2, embed_dim=16, num_groups=1, blocks_per_group=1)
        v_sr, _, _ = preprocess_dataset(
            tiny_dataset, self.spec(preprocess="sr", sr_cfg=sr_cfg), 0, tmp_path)
        v_in, _, _ = preprocess_dataset(
            tiny_dataset, self.spec(preprocess="interpolate"), 0, tmp_path)
        for a, b in zip(v_sr.samples[:6], v_in.samples[:6]):
            assert psnr_db(data_mod.load_image(a), data_mod.load_image(b)) >= 30.0

    def test_center_stub_requires_geometry(self, tiny_dataset, tmp_path):
        stripped = dataclasses.replace(
            tiny_dataset, name="stripped",
            samples=[dataclasses.replace(s, geometry_meta=None)
                     for s in tiny_dataset.samples])
        with pytest.raises(ValueError, match="geometry"):
            preprocess_dataset(stripped, self.spec(preprocess="center_stub"), 0, tmp_path)


class TestRunLoso:
    def test_report_structure_and_mean_recompute(self, tiny_dataset, tmp_path):
        spec = PipelineSpec(preprocess="none", model=CNN56, name="unit")
        cfg = TrainConfig(epochs=2, seed=3)
        report = run_loso(tiny_dataset, spec, cfg, tmp_path)
        assert {f["subject"] for f in report.folds} == set(tiny_dataset.subjects())
        assert report.mean_pog == pytest.approx(
            np.mean([f["pog_best"] for f in report.folds]), abs=1e-12)
        assert report.mean_pog_final == pytest.approx(
            np.mean([f["pog_final"] for f in report.folds]), abs=1e-12)
        saved = list((tmp_path / "reports").glob("*.json"))
        assert len(saved) == 1
        loaded = EvalReport.from_json(saved[0])
        assert loaded.to_dict() == report.to_dict()
        assert loaded.environment["jpeg_codec"].startswith("opencv-")

    def test_rerun_reproduces_exactly(self, tiny_dataset, tmp_path):
        spec = PipelineSpec(preprocess="none", model=CNN56, name="unit")
        cfg = TrainConfig(epochs=2, seed=4)
        r1 = run_loso(tiny_dataset, spec, cfg, tmp_path / "a")
        r2 = run_loso(tiny_dataset, spec, cfg, tmp_path / "b")
        assert r1.mean_pog == pytest.approx(r2.mean_pog, abs=1e-6)
        assert [f["pog_best"] for f in r1.folds] == pytest.approx(
            [f["pog_best"] for f in r2.folds], abs=1e-6)


class TestProbe:
    def test_identity_restoration_scores_zero(self, tiny_dataset):
        model = build_regressor(CNN56, seed=0)
        report = gaze_preservation_probe(model, tiny_dataset, tiny_dataset)
        assert report.mean_shift_deg == 0.0
        assert report.centering_score == pytest.approx(0.0, abs=1e-12)
        assert report.n_samples == len(tiny_dataset)
        assert sum(report.shift_histogram["counts"]) == report.n_samples

    def test_unpaired_datasets_rejected(self, tiny_dataset):
        model = build_regressor(CNN56, seed=0)
        partial = dataclasses.replace(tiny_dataset, name="partial",
                                      samples=tiny_dataset.samples[:-1])
        with pytest.raises(ValueError, match="paired"):
            gaze_preservation_probe(model, tiny_dataset, partial)

    def test_centering_detected_on_recentred_variant(self, small_dataset, tmp_path):
        # probe on a memorized training subject so the model genuinely tracks
        # gaze; the recentred variant should then collapse its predictions
        subjects = small_dataset.subjects()
        train = small_dataset.by_subject(subjects[:-1])
        test = small_dataset.by_subject(subjects[-1:])
        model = build_regressor(CNN56, seed=0)
        train_gaze(model, train, test,
                   TrainConfig(epochs=12, seed=0, epoch_selection="final"))
        probe_ds = small_dataset.by_subject(subjects[:1])
        stub, _, _ = preprocess_dataset(
            probe_ds, PipelineSpec(preprocess="center_stub", model=CNN56, low_res_size=56),
            0, tmp_path)
        report = gaze_preservation_probe(model, probe_ds, stub)
        assert report.centering_score > 0.3
        assert report.mean_shift_deg > 1.0
