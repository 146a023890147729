"""Error metric, method comparison reports, and pseudocolor rendering.

The per-sample metric is the L1 relative error over grid values,
sum |pred - truth| / sum |truth|.  Reports aggregate per-method means and
timings over a fixed test split and are emitted as JSON and CSV.  Images
are written as binary PPM (P6), the bit-exactly specifiable test surface,
with an optional PNG encoder built on zlib.
"""

from __future__ import annotations

import csv
import io
import json
import struct
import zlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .geometry import ScalarField

# Context-only reference errors from a full-scale run of the same pipeline
# (homogeneous-medium mean task, 1600 training / 200 test samples).  Never
# used as tolerances; desk-scale runs are compared against themselves.
FULL_SCALE_REFERENCE = {"pca": 0.62, "dmd": 0.63, "unet": 0.20, "pix2pix": 0.22}

STAGE_ONE_COLUMN = "stage_one"


def l1_relative_error(pred: ScalarField, truth: ScalarField) -> float:
    if pred.grid != truth.grid:
        raise ValueError("prediction and truth live on different grids")
    denom = float(np.sum(np.abs(truth.values)))
    if denom == 0.0:
        raise ValueError("truth field is identically zero")
    return float(np.sum(np.abs(pred.values - truth.values))) / denom


@dataclass
class EvaluationReport:
    dataset: str
    split: str
    sample_ids: list
    per_sample: dict           # method -> list of per-sample errors
    mean_error: dict           # method -> mean of per-sample errors
    timings: dict              # method -> seconds (fit + predict), optional
    reference: dict = field(default_factory=lambda: dict(FULL_SCALE_REFERENCE))

    def to_json(self) -> str:
        return json.dumps({
            "dataset": self.dataset,
            "split": self.split,
            "sample_ids": self.sample_ids,
            "per_sample": self.per_sample,
            "mean_error": self.mean_error,
            "timings": self.timings,
            "full_scale_reference": self.reference,
        }, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        methods = list(self.mean_error)
        writer.writerow(["sample_id"] + methods)
        for i, sid in enumerate(self.sample_ids):
            writer.writerow([sid] + [f"{self.per_sample[m][i]:.6f}" for m in methods])
        writer.writerow(["mean"] + [f"{self.mean_error[m]:.6f}" for m in methods])
        writer.writerow(["time_s"] + [f"{self.timings.get(m, float('nan')):.3f}"
                                      for m in methods])
        return buf.getvalue()


def compare_methods(dataset_name: str, split_name: str, sample_ids,
                    truths, stage_one_fields, method_predictions: dict,
                    timings: dict | None = None) -> EvaluationReport:
    """Build the comparison table.  ``method_predictions`` maps a method name
    to a list of ScalarField predictions co-indexed with sample_ids; the
    stage-one baseline is always included as its own column."""
    sample_ids = list(sample_ids)
    n = len(sample_ids)
    if len(truths) != n or len(stage_one_fields) != n:
        raise ValueError("truths and stage-one fields must match the split size")
    for name, preds in method_predictions.items():
        if len(preds) != n:
            raise ValueError(
                f"method {name!r} supplied {len(preds)} predictions for {n} samples; "
                "splits must be identical across methods")

    per_sample = {STAGE_ONE_COLUMN: [l1_relative_error(x, y)
                                     for x, y in zip(stage_one_fields, truths)]}
    for name, preds in method_predictions.items():
        per_sample[name] = [l1_relative_error(p, y) for p, y in zip(preds, truths)]
    mean_error = {name: float(np.mean(errs)) for name, errs in per_sample.items()}
    return EvaluationReport(dataset=dataset_name, split=split_name,
                            sample_ids=sample_ids, per_sample=per_sample,
                            mean_error=mean_error, timings=dict(timings or {}))


def write_report(report: EvaluationReport, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "report.csv").write_text(report.to_csv())


# ---------------------------------------------------------------------------
# rendering


def _load_colormap() -> np.ndarray:
    text = resources.files("stochsource").joinpath("data/colormap_256.csv").read_text()
    rows = [tuple(int(v) for v in line.split(",")) for line in text.strip().splitlines()]
    table = np.asarray(rows, dtype=np.uint8)
    if table.shape != (256, 3):
        raise DataFormatError(f"colormap table has shape {table.shape}, expected (256, 3)")
    return table


_COLORMAP: np.ndarray | None = None


def colormap() -> np.ndarray:
    global _COLORMAP
    if _COLORMAP is None:
        _COLORMAP = _load_colormap()
    return _COLORMAP


def field_to_rgb(fld: ScalarField, value_range=None) -> np.ndarray:
    """(n, n, 3) uint8 image; row 0 at the top corresponds to the highest
    second coordinate so images read like plots."""
    values = fld.as_image()
    if value_range is None:
        lo, hi = float(values.min()), float(values.max())
    else:
        lo, hi = map(float, value_range)
        if hi < lo:
            raise ValueError(f"empty value range ({lo}, {hi})")
    if hi == lo:
        idx = np.zeros_like(values, dtype=np.uint8)
    else:
        scaled = (values - lo) / (hi - lo)
        idx = np.clip(np.round(scaled * 255.0), 0, 255).astype(np.uint8)
    return colormap()[idx[::-1, :]]


def write_ppm(rgb: np.ndarray, path) -> None:
    h, w = rgb.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(rgb.tobytes())


def write_png(rgb: np.ndarray, path) -> None:
    """Minimal PNG encoder (8-bit RGB, no filtering), zlib only."""
    h, w = rgb.shape[:2]
    raw = b"".join(b"\x00" + rgb[row].tobytes() for row in range(h))

    def chunk(tag: bytes, data: bytes) -> bytes:
        return (struct.pack(">I", len(data)) + tag + data
                + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF))

    header = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    blob = (b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", header)
            + chunk(b"IDAT", zlib.compress(raw, 9)) + chunk(b"IEND", b""))
    Path(path).write_bytes(blob)


def render_pseudocolor(fld: ScalarField, path, value_range=None) -> None:
    """Write an n x n image of the field; format from the suffix (.ppm or
    .png).  An explicit value range makes panels comparable across files."""
    rgb = field_to_rgb(fld, value_range)
    path = Path(path)
    if path.suffix.lower() == ".png":
        write_png(rgb, path)
    elif path.suffix.lower() == ".ppm":
        write_ppm(rgb, path)
    else:
        raise ValueError(f"unsupported image suffix {path.suffix!r} (use .ppm or .png)")
