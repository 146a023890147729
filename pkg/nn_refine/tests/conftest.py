import json
import struct
import zlib
from pathlib import Path

import numpy as np
import pytest


def _write_sample_file(path: Path, sample_id: int, x: np.ndarray, y: np.ndarray,
                       grid_n: int, medium: str = "homogeneous"):
    meta = {"id": sample_id, "grid_n": grid_n, "grid_lo": -1.0, "grid_hi": 1.0,
            "task": "mean", "medium": medium, "seed": 0,
            "realizations": 8, "noise_level": 0.0, "noise_mode": "relative",
            "wavenumbers": [1.0]}
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [struct.pack("<I", 1), struct.pack("<I", len(meta_bytes)), meta_bytes]
    for arr in (x, y):
        flat = np.ascontiguousarray(arr, dtype="<f8").ravel()
        parts.append(struct.pack("<I", flat.size))
        parts.append(flat.tobytes())
    payload = b"".join(parts)
    with open(path, "wb") as f:
        f.write(b"SRCSAMP1")
        f.write(payload)
        f.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def make_dataset(root: Path, count: int, grid_n: int = 64, train: int | None = None,
                 test: int | None = None, seed: int = 0,
                 target_fn=None, medium: str = "homogeneous") -> Path:
    """Synthetic dataset in the shared format: stage-one images are blurred,
    rescaled views of blocky truths (plus noise), so a refiner has real
    structure to learn."""
    rng = np.random.default_rng(seed)
    (root / "samples").mkdir(parents=True, exist_ok=True)
    files = {}
    for i in range(count):
        truth = np.zeros((grid_n, grid_n))
        cx, cy = rng.integers(grid_n // 4, 3 * grid_n // 4, 2)
        r = rng.integers(grid_n // 8, grid_n // 4)
        yy, xx = np.mgrid[0:grid_n, 0:grid_n]
        truth[(xx - cx) ** 2 + (yy - cy) ** 2 < r ** 2] = float(rng.integers(1, 4))
        if target_fn is not None:
            x = target_fn(truth, rng)
        else:
            # crude blur: averaged shifts, wrong amplitude, additive noise
            x = 0.35 * sum(np.roll(np.roll(truth, dx, 0), dy, 1)
                           for dx in (-2, 0, 2) for dy in (-2, 0, 2)) / 9.0
            x = x + 0.05 * rng.standard_normal((grid_n, grid_n))
        rel = f"samples/sample_{i:06d}.bin"
        _write_sample_file(root / rel, i, x, truth, grid_n, medium)
        files[str(i)] = rel
    train = count if train is None else train
    manifest = {
        "format_version": 1, "master_seed": seed, "config": {}, "grid_n": grid_n,
        "sample_ids": list(range(count)), "files": files, "failed_ids": [],
        "splits": {"train": list(range(train)),
                   "test": list(range(train, train + (test or 0)))},
    }
    (root / "manifest.json").write_text(json.dumps(manifest))
    return root


@pytest.fixture
def tiny_dataset(tmp_path):
    return make_dataset(tmp_path / "ds", count=6, grid_n=64, train=4, test=2)
