"""Config-driven command-line pipeline: generate, stage1, fit, predict,
evaluate, plots, print-config.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.  Every command is deterministic given identical inputs and seed;
outputs are refused if already present unless --force is given.  Neural
predictions produced by the companion trainer are evaluated through the
same prediction-directory contract as the linear models.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (GenerationConfig, default_wavenumbers,
                      generate_dataset, load_manifest, load_samples,
                      read_field, save_manifest, snapshot_matrices, split,
                      write_field)
from .errors import ConfigError, DataFormatError, NumericFailure
from .evaluation import compare_methods, render_pseudocolor, write_report
from .refine import dmd_fit, load_model, pca_fit, save_model

log = logging.getLogger("stochsource")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


@dataclass
class RunConfig:
    """Defaults mirror the standard experiment configuration."""

    task: str = "mean"
    medium: str = "homogeneous"
    sample_count: int = 8
    realizations: int | None = None   # 100 (mean) / 1000 (variance)
    noise_level: float = 0.0
    noise_mode: str = "relative"
    grid_n: int = 64
    receiver_count: int = 32
    receiver_radius: float = 2.0
    wavenumbers: list = field(default_factory=default_wavenumbers)
    regularization: float = 1e-8
    outer_loops: int = 1
    pca_components: int = 1000
    dmd_components: int = 100
    master_seed: int = 20240501
    split_seed: int = 1
    share_noise_across_wavenumbers: bool = True
    fdfd_points_per_wavelength: float = 10.0
    forward_route: str = "pde"
    # default worker count comes from STOCHSOURCE_WORKERS when set
    workers: int = field(
        default_factory=lambda: int(os.environ.get("STOCHSOURCE_WORKERS", "1")))

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        values = {}
        if path is not None:
            try:
                values = json.loads(Path(path).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
        unknown = set(values) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        try:
            return cls(**values)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def generation(self) -> GenerationConfig:
        return GenerationConfig(
            task=self.task, medium=self.medium, sample_count=self.sample_count,
            realizations=self.realizations, noise_level=self.noise_level,
            noise_mode=self.noise_mode, master_seed=self.master_seed,
            grid_n=self.grid_n, receiver_count=self.receiver_count,
            receiver_radius=self.receiver_radius,
            wavenumbers=[float(k) for k in self.wavenumbers],
            regularization=self.regularization, outer_loops=self.outer_loops,
            share_noise_across_wavenumbers=self.share_noise_across_wavenumbers,
            fdfd_points_per_wavelength=self.fdfd_points_per_wavelength,
            forward_route=self.forward_route)


def _write_run_info(out_dir: Path, args: argparse.Namespace, config: RunConfig | None):
    info = {"package_version": __version__,
            "command": args.command,
            "argv": sys.argv[1:],
            "config": asdict(config) if config else None}
    if config:
        info["config"]["wavenumbers"] = [float(k) for k in config.wavenumbers]
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_info.json").write_text(json.dumps(info, indent=2))


def _require_absent(path: Path, force: bool, what: str):
    if path.exists() and not force:
        raise ConfigError(f"{what} {path} exists; pass --force to overwrite")


# ---------------------------------------------------------------------------
# commands


def cmd_print_config(args) -> int:
    config = RunConfig.load(args.config)
    d = asdict(config)
    d["wavenumbers"] = [float(k) for k in config.wavenumbers]
    print(json.dumps(d, indent=2))
    return EXIT_OK


def cmd_generate(args) -> int:
    config = RunConfig.load(args.config, _config_overrides(args))
    out = Path(args.out)
    gen = config.generation()
    log.info("generating %d samples (task=%s medium=%s seed=%d) into %s",
             gen.sample_count, gen.task, gen.medium, gen.master_seed, out)
    manifest = generate_dataset(gen, out, force=args.force, workers=config.workers)
    if args.train is not None or args.test is not None:
        train = args.train if args.train is not None else 0
        test = args.test if args.test is not None else 0
        split(manifest, train, test, config.split_seed)
        save_manifest(manifest, out)
    _write_run_info(out, args, config)
    log.info("wrote %d samples (%d failed)", len(manifest.sample_ids),
             len(manifest.failed_ids))
    return EXIT_OK


def cmd_stage1(args) -> int:
    """Export stage-one images for chosen samples into field files."""
    manifest = load_manifest(args.dataset)
    ids = _parse_ids(args.ids) if args.ids else manifest.sample_ids
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = load_samples(args.dataset, ids)
    for record in records:
        path = out / f"stage1_{record.sample_id:06d}.bin"
        write_field(record.stage_one, path, {"id": record.sample_id,
                                             "source": "dataset"})
    log.info("exported %d stage-one fields to %s", len(records), out)
    _write_run_info(out, args, None)
    return EXIT_OK


def cmd_fit(args) -> int:
    config = RunConfig.load(args.config, _config_overrides(args))
    manifest = load_manifest(args.dataset)
    train_ids = manifest.splits.get("train")
    if not train_ids:
        raise DataFormatError(f"dataset {args.dataset} has no train split")
    records = load_samples(args.dataset, train_ids)
    X, Y = snapshot_matrices(records)
    t0 = time.perf_counter()
    if args.method == "pca":
        model = pca_fit(X, Y, config.pca_components)
    elif args.method == "dmd":
        model = dmd_fit(X, Y, config.dmd_components)
    else:
        raise ConfigError(f"unknown method {args.method!r}")
    elapsed = time.perf_counter() - t0
    out = Path(args.out)
    _require_absent(out / "manifest.json", args.force, "model")
    save_model(model, out)
    (out / "fit_info.json").write_text(json.dumps({
        "method": args.method, "dataset": str(args.dataset),
        "train_ids": train_ids, "fit_seconds": elapsed,
        "retained": model.retained}, indent=2))
    log.info("fitted %s on %d samples in %.2fs (retained %d components)",
             args.method, len(train_ids), elapsed, model.retained)
    return EXIT_OK


def cmd_predict(args) -> int:
    manifest = load_manifest(args.dataset)
    ids = manifest.splits.get(args.split)
    if not ids:
        raise DataFormatError(f"dataset {args.dataset} has no {args.split!r} split")
    model = load_model(args.model)
    records = load_samples(args.dataset, ids)
    out = Path(args.out)
    fields_dir = out / "fields"
    _require_absent(out / "predictions.json", args.force, "prediction index")
    fields_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    files = {}
    for record in records:
        pred = model.predict(record.stage_one.values)
        fld = type(record.stage_one)(record.stage_one.grid, pred)
        rel = f"fields/pred_{record.sample_id:06d}.bin"
        write_field(fld, out / rel, {"id": record.sample_id})
        files[str(record.sample_id)] = rel
    elapsed = time.perf_counter() - t0
    (out / "predictions.json").write_text(json.dumps({
        "method": getattr(args, "name", None) or Path(args.model).name,
        "dataset": str(args.dataset), "split": args.split,
        "files": files, "predict_seconds": elapsed}, indent=2))
    log.info("wrote %d predictions to %s", len(files), out)
    return EXIT_OK


def _load_predictions(pred_dir: Path, expected_split: str, expected_ids):
    try:
        index = json.loads((pred_dir / "predictions.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot read predictions at {pred_dir}: {exc}") from exc
    if index.get("split") != expected_split:
        raise DataFormatError(
            f"{pred_dir}: predictions are for split {index.get('split')!r}, "
            f"expected {expected_split!r}")
    got = sorted(int(i) for i in index["files"])
    if got != sorted(expected_ids):
        raise DataFormatError(f"{pred_dir}: prediction ids do not match the split")
    fields = []
    for sid in expected_ids:
        fld, _ = read_field(pred_dir / index["files"][str(sid)])
        fields.append(fld)
    return fields, float(index.get("predict_seconds", float("nan")))


def cmd_evaluate(args) -> int:
    manifest = load_manifest(args.dataset)
    ids = manifest.splits.get(args.split)
    if not ids:
        raise DataFormatError(f"dataset {args.dataset} has no {args.split!r} split")
    records = load_samples(args.dataset, ids)
    truths = [r.truth for r in records]
    stage_one = [r.stage_one for r in records]
    predictions, timings = {}, {}
    for spec in args.pred or []:
        name, _, pred_dir = spec.partition("=")
        if not pred_dir:
            raise ConfigError(f"--pred wants NAME=DIR, got {spec!r}")
        fields, seconds = _load_predictions(Path(pred_dir), args.split, ids)
        predictions[name] = fields
        timings[name] = seconds
    report = compare_methods(str(args.dataset), args.split, ids, truths,
                             stage_one, predictions, timings)
    out = Path(args.out)
    _require_absent(out / "report.json", args.force, "report")
    write_report(report, out)
    for name, err in report.mean_error.items():
        log.info("mean L1 relative error [%s]: %.4f", name, err)
    return EXIT_OK


def cmd_plots(args) -> int:
    manifest = load_manifest(args.dataset)
    ids = _parse_ids(args.ids) if args.ids else manifest.splits.get("test", manifest.sample_ids)[:4]
    records = load_samples(args.dataset, ids)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    value_range = None
    if args.range:
        lo, _, hi = args.range.partition(",")
        value_range = (float(lo), float(hi))
    suffix = ".png" if args.png else ".ppm"
    for record in records:
        render_pseudocolor(record.truth, out / f"truth_{record.sample_id:06d}{suffix}",
                           value_range)
        render_pseudocolor(record.stage_one, out / f"stage1_{record.sample_id:06d}{suffix}",
                           value_range)
    for spec in args.pred or []:
        name, _, pred_dir = spec.partition("=")
        index = json.loads((Path(pred_dir) / "predictions.json").read_text())
        for sid in ids:
            rel = index["files"].get(str(sid))
            if rel is None:
                raise DataFormatError(f"{pred_dir}: no prediction for sample {sid}")
            fld, _ = read_field(Path(pred_dir) / rel)
            render_pseudocolor(fld, out / f"{name}_{sid:06d}{suffix}", value_range)
    log.info("wrote plots for samples %s to %s", ids, out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument plumbing


def _parse_ids(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part]
    except ValueError as exc:
        raise ConfigError(f"bad id list {text!r}") from exc


def _config_overrides(args) -> dict:
    keys = ("task", "medium", "sample_count", "realizations", "noise_level",
            "noise_mode", "grid_n", "master_seed", "split_seed", "workers",
            "pca_components", "dmd_components")
    return {k: getattr(args, k, None) for k in keys}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stochsource",
        description="Two-stage random-source reconstruction pipeline")
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("print-config", help="print the effective configuration")
    p.add_argument("--config")
    p.set_defaults(fn=cmd_print_config)

    p = sub.add_parser("generate", help="generate a dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--task", choices=["mean", "variance"])
    p.add_argument("--medium", choices=["homogeneous", "inhomogeneous"])
    p.add_argument("--sample-count", dest="sample_count", type=int)
    p.add_argument("--realizations", type=int)
    p.add_argument("--noise-level", dest="noise_level", type=float)
    p.add_argument("--noise-mode", dest="noise_mode", choices=["relative", "absolute"])
    p.add_argument("--grid-n", dest="grid_n", type=int)
    p.add_argument("--master-seed", dest="master_seed", type=int)
    p.add_argument("--split-seed", dest="split_seed", type=int)
    p.add_argument("--train", type=int, help="train split size")
    p.add_argument("--test", type=int, help="test split size")
    p.add_argument("--workers", type=int)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("stage1", help="export stage-one fields from a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--ids")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_stage1)

    p = sub.add_parser("fit", help="fit a linear refinement model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--method", required=True, choices=["pca", "dmd"])
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--pca-components", dest="pca_components", type=int)
    p.add_argument("--dmd-components", dest="dmd_components", type=int)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_fit)

    p = sub.add_parser("predict", help="write predictions for a split")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--name", help="method name recorded in predictions.json")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("evaluate", help="compare methods on one split")
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--pred", action="append",
                   help="NAME=PREDICTION_DIR, repeatable")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("plots", help="render truth/stage-one/prediction images")
    p.add_argument("--dataset", required=True)
    p.add_argument("--ids")
    p.add_argument("--pred", action="append")
    p.add_argument("--range", help="lo,hi fixed color range")
    p.add_argument("--png", action="store_true", help="write PNG instead of PPM")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_plots)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    log.info("stochsource %s", __version__)
    try:
        return args.fn(args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (DataFormatError, FileNotFoundError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except (NumericFailure, np.linalg.LinAlgError) as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
