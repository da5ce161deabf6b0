"""Single entry-point CLI for the full pipeline.

Subcommands: synth, degrade, train-sr, train-gaze, loso, table1, table3,
table5, probe, report.  Every run writes its resolved config and environment
fingerprint beside its outputs.  Exit codes: 0 success, 1 domain/config error
(one-line diagnostic on stderr), 2 internal error (traceback file path).
"""

import argparse
import csv
import hashlib
import json
import sys
import tempfile
import traceback
from pathlib import Path

from . import checkpoint, data, degrade, models, report as report_mod, sr
from .config import ConfigError, RunConfig
from .harness import (PipelineSpec, derive_seed, environment_fingerprint,
                      gaze_preservation_probe, run_loso, run_table1_style,
                      run_table3_style, run_table5_style, train_gaze)


def _write_run_metadata(out_dir, cfg, inputs=None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.dump(out_dir / "resolved_config.json")
    (out_dir / "environment.json").write_text(
        json.dumps(environment_fingerprint(seed=cfg.seed), indent=2))
    if inputs:
        (out_dir / "inputs.json").write_text(json.dumps(inputs, indent=2))


def _load_data(cfg, args, out_dir):
    """Use --data when given, else generate the configured synthetic dataset."""
    if getattr(args, "data", None):
        return data.load_dataset(args.data)
    root = cfg.resolved["dataset"]["root"]
    if root:
        return data.load_dataset(root)
    s = cfg.resolved["synthetic"]
    return data.generate_synthetic(s["n_subjects"], s["per_subject"],
                                   s["image_size"], cfg.seed,
                                   Path(out_dir) / "data")


def _build_spec(cfg, preprocess=None, degraded=None, low=None):
    preprocess = preprocess or cfg.resolved["experiment"]["preprocess"]
    if degraded is None:
        ranges = cfg.degradation_ranges()
    else:
        ranges = cfg.degradation_ranges() if degraded else None
    if preprocess == "supervision":
        model = cfg.supervision_config()
    else:
        model = cfg.model_config()
    return PipelineSpec(
        preprocess=preprocess, model=model, degradation=ranges,
        low_res_size=low or cfg.resolved["experiment"]["low_res_size"],
        sr_cfg=cfg.sr_config(),
        sr_checkpoint=cfg.resolved["sr"]["checkpoint"],
        sr_identity_init=cfg.resolved["sr"]["identity_init"],
    ).validate()


def cmd_synth(cfg, args):
    out = Path(args.out)
    s = cfg.resolved["synthetic"]
    key = hashlib.sha256(json.dumps([s, cfg.seed], sort_keys=True).encode()).hexdigest()
    marker = out / "_SYNTH_HASH"
    if marker.is_file() and marker.read_text() == key and (out / "subjects").is_dir():
        print(f"synth: content hash {key[:12]} already materialized at {out}; nothing to do")
        return 0
    ds = data.generate_synthetic(s["n_subjects"], s["per_subject"], s["image_size"],
                                 cfg.seed, out)
    marker.write_text(key)
    _write_run_metadata(out, cfg, inputs={"content_hash": ds.content_hash()})
    print(f"synth: wrote {len(ds)} samples ({s['n_subjects']} subjects) to {out}")
    return 0


def cmd_degrade(cfg, args):
    ds = data.load_dataset(args.input)
    ranges = cfg.degradation_ranges()
    if ranges is None:
        raise ConfigError("degradation.enabled is false; nothing to apply")
    out = Path(args.out)
    import cv2
    records = []
    for idx, sample in enumerate(ds.samples):
        recipe = degrade.sample_recipe(ranges, derive_seed(cfg.seed, idx))
        img = degrade.complex_degrade(data.load_image(sample), recipe)
        sdir = out / "subjects" / sample.subject_id
        (sdir / "images").mkdir(parents=True, exist_ok=True)
        fname = Path(sample.image_path).name.rsplit(".", 1)[0] + ".jpg"
        cv2.imwrite(str(sdir / "images" / fname), cv2.cvtColor(img, cv2.COLOR_RGB2BGR),
                    [cv2.IMWRITE_JPEG_QUALITY, 100])
        with open(sdir / "labels.csv", "a", newline="") as f:
            f.write(f"{fname},{sample.gaze[0]!r},{sample.gaze[1]!r}\n")
        records.append({"path": str(sample.image_path), "output": fname,
                        "recipe": recipe.to_dict()})
    with open(out / "recipes.jsonl", "w") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")
    _write_run_metadata(out, cfg, inputs={"content_hash": ds.content_hash()})
    print(f"degrade: wrote {len(records)} images + recipe sidecar to {out}")
    return 0


def cmd_train_sr(cfg, args):
    out = Path(args.out)
    ds = _load_data(cfg, args, out)
    images = [data.load_image(s) for s in ds.samples]
    model = sr.build_sr_backbone(cfg.sr_config(), seed=cfg.seed,
                                 identity_init=cfg.resolved["sr"]["identity_init"])
    ranges = cfg.degradation_ranges()
    if ranges is None:
        raise ConfigError("SR pretext training needs degradation.enabled: true")
    losses = sr.train_sr_pretext(model, images, ranges, cfg.sr_pretext_config())
    out.mkdir(parents=True, exist_ok=True)
    checkpoint.save_checkpoint(out / "sr.ckpt", model, config=cfg.sr_config().to_dict(),
                               extra={"steps": len(losses), "seed": cfg.seed})
    with open(out / "pretext_loss.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "l1_loss"])
        writer.writerows((i, v) for i, v in enumerate(losses))
    _write_run_metadata(out, cfg, inputs={"content_hash": ds.content_hash()})
    print(f"train-sr: {len(losses)} steps, final loss {losses[-1]:.5f}; "
          f"checkpoint at {out / 'sr.ckpt'}")
    return 0


def cmd_train_gaze(cfg, args):
    out = Path(args.out)
    ds = _load_data(cfg, args, out)
    subjects = ds.subjects()
    test_subject = args.test_subject or subjects[-1]
    if test_subject not in subjects:
        raise ConfigError(f"unknown test subject {test_subject!r}")
    model = models.build_regressor(cfg.model_config(), seed=cfg.seed)
    trainset = ds.by_subject([s for s in subjects if s != test_subject])
    testset = ds.by_subject([test_subject])
    model, curves = train_gaze(model, trainset, testset, cfg.train_config())
    out.mkdir(parents=True, exist_ok=True)
    checkpoint.save_checkpoint(out / "gaze.ckpt", model,
                               config=cfg.model_config().to_dict(),
                               extra={"test_subject": test_subject})
    with open(out / "curves.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "train_loss", "test_pog_deg"])
        for i, (tl, tp) in enumerate(zip(curves["train_loss"], curves["test_pog"]), 1):
            writer.writerow([i, tl, tp])
    _write_run_metadata(out, cfg, inputs={"content_hash": ds.content_hash()})
    print(f"train-gaze: test subject {test_subject}, "
          f"POG best {curves['pog_best']:.3f} deg (epoch {curves['best_epoch']}), "
          f"final {curves['pog_final']:.3f} deg")
    return 0


def cmd_loso(cfg, args):
    out = Path(args.out)
    ds = _load_data(cfg, args, out)
    spec = _build_spec(cfg)
    rep = run_loso(ds, spec, cfg.train_config(), out)
    _write_run_metadata(out, cfg, inputs={"content_hash": ds.content_hash()})
    print(f"loso: {len(rep.folds)} folds, mean POG {rep.mean_pog:.3f} deg "
          f"(report {rep.experiment_id})")
    return 0


def cmd_table1(cfg, args):
    out = Path(args.out)
    ds = _load_data(cfg, args, out)
    reports = run_table1_style(ds, cfg.train_config(), out,
                               lambda p, d: _build_spec(cfg, preprocess=p, degraded=d))
    _finish_table(cfg, ds, out, reports, "table1")
    return 0


def cmd_table3(cfg, args):
    out = Path(args.out)
    ds = _load_data(cfg, args, out)
    pairs = [tuple(p) for p in cfg.resolved["experiment"]["size_pairs"]]

    def make_spec(preprocess, low, gaze_size):
        spec = _build_spec(cfg, preprocess=preprocess, low=low)
        spec.model = models.GazeRegressorConfig(
            kind=cfg.resolved["model"]["kind"], input_size=gaze_size,
            head_hidden=cfg.resolved["model"]["head_hidden"],
            dropout=cfg.resolved["model"]["dropout"]).validate()
        return spec

    reports = run_table3_style(ds, cfg.train_config(), out, make_spec, pairs)
    _finish_table(cfg, ds, out, reports, "table3")
    return 0


def cmd_table5(cfg, args):
    out = Path(args.out)
    ds = _load_data(cfg, args, out)
    fractions = tuple(cfg.resolved["experiment"]["fractions"])
    reports = run_table5_style(ds, cfg.train_config(), out,
                               lambda p: _build_spec(cfg, preprocess=p),
                               fractions=fractions)
    _finish_table(cfg, ds, out, reports, "table5")
    return 0


def _finish_table(cfg, ds, out, reports, label):
    report_mod.reports_to_csv([r.to_dict() for r in reports], Path(out) / f"{label}.csv")
    _write_run_metadata(out, cfg, inputs={"content_hash": ds.content_hash()})
    print(f"{label}: {len(reports)} runs")
    for r in reports:
        print(f"  {r.experiment_id}: mean POG {r.mean_pog:.3f} deg")


def cmd_probe(cfg, args):
    out = Path(args.out)
    original = data.load_dataset(args.original)
    restored = data.load_dataset(args.restored)
    model = models.build_regressor(cfg.model_config(), seed=cfg.seed)
    checkpoint.load_checkpoint(args.gaze_weights, module=model)
    probe = gaze_preservation_probe(model, original, restored)
    out.mkdir(parents=True, exist_ok=True)
    (out / "probe.json").write_text(json.dumps(probe.to_dict(), indent=2))
    report_mod.plot_shift_histogram(probe.to_dict(), out / "probe_histogram.png")
    _write_run_metadata(out, cfg, inputs={
        "original_hash": original.content_hash(), "restored_hash": restored.content_hash()})
    print(f"probe: mean shift {probe.mean_shift_deg:.3f} deg, "
          f"centering score {probe.centering_score:.3f}")
    return 0


def cmd_report(cfg, args):
    summary = report_mod.render_report_dir(args.reports, args.out)
    print(f"report: wrote {summary}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="srgaze", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **extra_args):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None)
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", type=Path, required=True)
        for flag, kwargs in extra_args.items():
            p.add_argument(flag, **kwargs)
        p.set_defaults(fn=fn)
        return p

    add("synth", cmd_synth)
    add("degrade", cmd_degrade, **{"--input": {"type": Path, "required": True}})
    add("train-sr", cmd_train_sr, **{"--data": {"type": Path, "default": None}})
    add("train-gaze", cmd_train_gaze, **{
        "--data": {"type": Path, "default": None},
        "--test-subject": {"dest": "test_subject", "default": None}})
    add("loso", cmd_loso, **{"--data": {"type": Path, "default": None}})
    add("table1", cmd_table1, **{"--data": {"type": Path, "default": None}})
    add("table3", cmd_table3, **{"--data": {"type": Path, "default": None}})
    add("table5", cmd_table5, **{"--data": {"type": Path, "default": None}})
    add("probe", cmd_probe, **{
        "--original": {"type": Path, "required": True},
        "--restored": {"type": Path, "required": True},
        "--gaze-weights": {"dest": "gaze_weights", "type": Path, "required": True}})
    add("report", cmd_report, **{"--reports": {"type": Path, "required": True}})
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config, overrides={"seed": args.seed})
        return args.fn(cfg, args)
    except (ConfigError, ValueError, data.LoadError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("interrupted; partial outputs (if any) were kept", file=sys.stderr)
        return 1
    except Exception:
        fd, path = tempfile.mkstemp(prefix="srgaze-traceback-", suffix=".txt")
        with open(fd, "w") as f:
            traceback.print_exc(file=f)
        print(f"internal error; traceback written to {path}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
