"""Generation, persistence, and splitting of paired (stage-one, truth) datasets.

Directory layout (the cross-language contract, documented byte-exactly in
FORMATS.md):

    dataset_dir/
      manifest.json
      samples/sample_000000.bin
      ...

Sample files carry an 8-byte magic, a format version, a JSON metadata
blob, the stage-one image X, the ground-truth image Y (both row-major
little-endian float64), and a CRC32 trailer.
"""

from __future__ import annotations

import json
import logging
import struct
import zlib
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DataFormatError, NumericFailure
from .forward import (FdfdConfig, add_noise, reduce, simulate_homogeneous,
                      simulate_medium)
from .geometry import (Grid, ScalarField, bump_profile, make_grid,
                       make_receiver_ring, medium_perturbation, paint_mean,
                       paint_std, sample_disks)
from .kaczmarz import BlockSystem, kaczmarz_reconstruct
from .kernels import assemble
from .seeding import (STREAM_DISKS, STREAM_FIELD_NOISE,
                      STREAM_MEASUREMENT_NOISE, derive_stream)

log = logging.getLogger(__name__)

SAMPLE_MAGIC = b"SRCSAMP1"
FIELD_MAGIC = b"SRCFLD01"
SAMPLE_FORMAT_VERSION = 1
MANIFEST_FORMAT_VERSION = 1

TASK_MEAN = "mean"
TASK_VARIANCE = "variance"
MEDIUM_HOMOGENEOUS = "homogeneous"
MEDIUM_INHOMOGENEOUS = "inhomogeneous"

DEFAULT_WAVENUMBER_COUNT = 5


def default_wavenumbers(count: int = DEFAULT_WAVENUMBER_COUNT) -> list[float]:
    """The standard ladder (0.5 + j) pi, j = 0..count-1."""
    return [(0.5 + j) * np.pi for j in range(count)]


@dataclass
class GenerationConfig:
    task: str = TASK_MEAN
    medium: str = MEDIUM_HOMOGENEOUS
    sample_count: int = 8
    realizations: int | None = None  # default: 100 for mean, 1000 for variance
    noise_level: float = 0.0
    noise_mode: str = "relative"
    master_seed: int = 20240501
    grid_n: int = 64
    receiver_count: int = 32
    receiver_radius: float = 2.0
    wavenumbers: list = field(default_factory=default_wavenumbers)
    regularization: float = 1e-8
    outer_loops: int = 1
    share_noise_across_wavenumbers: bool = True
    fdfd_points_per_wavelength: float = 10.0
    # Forward route for the synthetic data.  The PDE route mirrors the
    # original pipeline (independent forward solver, quadrature inversion
    # kernels); the quadrature route shares the inversion discretization
    # and yields unrealistically consistent data, useful for cross-checks.
    forward_route: str = "pde"

    def __post_init__(self):
        if self.task not in (TASK_MEAN, TASK_VARIANCE):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.medium not in (MEDIUM_HOMOGENEOUS, MEDIUM_INHOMOGENEOUS):
            raise ConfigError(f"unknown medium {self.medium!r}")
        if self.sample_count < 1:
            raise ConfigError("sample_count must be positive")
        if self.realizations is None:
            self.realizations = 100 if self.task == TASK_MEAN else 1000
        if self.realizations < (1 if self.task == TASK_MEAN else 2):
            raise ConfigError(f"too few realizations for task {self.task}")
        if self.noise_level < 0:
            raise ConfigError("noise_level must be nonnegative")
        if self.forward_route not in ("pde", "quadrature"):
            raise ConfigError(f"unknown forward route {self.forward_route!r}")
        if self.forward_route == "quadrature" and self.medium == MEDIUM_INHOMOGENEOUS:
            raise ConfigError("the quadrature route cannot simulate an inhomogeneous medium")

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["wavenumbers"] = [float(k) for k in self.wavenumbers]
        return d


@dataclass
class SampleRecord:
    sample_id: int
    stage_one: ScalarField   # X
    truth: ScalarField       # Y
    metadata: dict

    def __post_init__(self):
        if self.stage_one.grid != self.truth.grid:
            raise ValueError("stage-one and truth fields must share one grid")
        required = {"task", "medium", "seed", "realizations", "noise_level", "wavenumbers"}
        missing = required - set(self.metadata)
        if missing:
            raise ValueError(f"sample metadata incomplete: missing {sorted(missing)}")


@dataclass
class DatasetManifest:
    format_version: int
    master_seed: int
    config: dict
    grid_n: int
    sample_ids: list
    files: dict            # id (as str) -> relative path
    failed_ids: list
    splits: dict           # name -> list of ids
    package_version: str = __version__

    def to_json(self) -> str:
        return json.dumps({
            "format_version": self.format_version,
            "master_seed": self.master_seed,
            "config": self.config,
            "grid_n": self.grid_n,
            "sample_ids": self.sample_ids,
            "files": self.files,
            "failed_ids": self.failed_ids,
            "splits": self.splits,
            "package_version": self.package_version,
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        d = json.loads(text)
        if d.get("format_version") != MANIFEST_FORMAT_VERSION:
            raise DataFormatError(
                f"manifest format version {d.get('format_version')} unsupported"
            )
        return cls(format_version=d["format_version"], master_seed=d["master_seed"],
                   config=d["config"], grid_n=d["grid_n"], sample_ids=d["sample_ids"],
                   files=d["files"], failed_ids=d.get("failed_ids", []),
                   splits=d.get("splits", {}),
                   package_version=d.get("package_version", "unknown"))


def load_manifest(dataset_dir) -> DatasetManifest:
    path = Path(dataset_dir) / "manifest.json"
    try:
        return DatasetManifest.from_json(path.read_text())
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# binary sample and field files


def _pack_payload(meta: dict, arrays: list[np.ndarray]) -> bytes:
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [struct.pack("<I", SAMPLE_FORMAT_VERSION),
             struct.pack("<I", len(meta_bytes)), meta_bytes]
    for a in arrays:
        flat = np.ascontiguousarray(a, dtype="<f8").ravel()
        parts.append(struct.pack("<I", flat.size))
        parts.append(flat.tobytes())
    return b"".join(parts)


def _unpack_payload(payload: bytes, n_arrays: int, what: str):
    try:
        off = 0
        (version,) = struct.unpack_from("<I", payload, off); off += 4
        if version != SAMPLE_FORMAT_VERSION:
            raise DataFormatError(f"{what}: format version {version} unsupported "
                                  f"(reader supports {SAMPLE_FORMAT_VERSION})")
        (mlen,) = struct.unpack_from("<I", payload, off); off += 4
        meta = json.loads(payload[off:off + mlen].decode("utf-8")); off += mlen
        arrays = []
        for _ in range(n_arrays):
            (count,) = struct.unpack_from("<I", payload, off); off += 4
            arr = np.frombuffer(payload, dtype="<f8", count=count, offset=off).copy()
            off += 8 * count
            arrays.append(arr)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise DataFormatError(f"{what}: truncated or malformed payload: {exc}") from exc
    if off != len(payload):
        raise DataFormatError(f"{what}: trailing bytes in payload")
    return meta, arrays


def _write_checked(path: Path, magic: bytes, payload: bytes) -> None:
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    with open(path, "wb") as f:
        f.write(magic)
        f.write(payload)
        f.write(struct.pack("<I", crc))


def _read_checked(path: Path, magic: bytes) -> bytes:
    blob = Path(path).read_bytes()
    if len(blob) < len(magic) + 8 or blob[:len(magic)] != magic:
        raise DataFormatError(f"{path}: bad magic, not a {magic!r} file")
    payload, (crc,) = blob[len(magic):-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise DataFormatError(f"{path}: checksum mismatch, file corrupt")
    return payload


def write_sample(record: SampleRecord, path) -> None:
    grid = record.truth.grid
    meta = dict(record.metadata)
    meta.update({"id": record.sample_id, "grid_n": grid.n,
                 "grid_lo": grid.lo, "grid_hi": grid.hi})
    payload = _pack_payload(meta, [record.stage_one.values, record.truth.values])
    _write_checked(Path(path), SAMPLE_MAGIC, payload)


def read_sample(path) -> SampleRecord:
    payload = _read_checked(Path(path), SAMPLE_MAGIC)
    meta, (x, y) = _unpack_payload(payload, 2, str(path))
    grid = make_grid(meta["grid_n"], meta["grid_lo"], meta["grid_hi"])
    sample_id = meta.pop("id")
    for k in ("grid_n", "grid_lo", "grid_hi"):
        meta.pop(k)
    return SampleRecord(sample_id=sample_id,
                        stage_one=ScalarField(grid, x),
                        truth=ScalarField(grid, y), metadata=meta)


def write_field(fld: ScalarField, path, metadata: dict | None = None) -> None:
    grid = fld.grid
    meta = dict(metadata or {})
    meta.update({"grid_n": grid.n, "grid_lo": grid.lo, "grid_hi": grid.hi})
    _write_checked(Path(path), FIELD_MAGIC, _pack_payload(meta, [fld.values]))


def read_field(path) -> tuple[ScalarField, dict]:
    payload = _read_checked(Path(path), FIELD_MAGIC)
    meta, (values,) = _unpack_payload(payload, 1, str(path))
    grid = make_grid(meta["grid_n"], meta["grid_lo"], meta["grid_hi"])
    for k in ("grid_n", "grid_lo", "grid_hi"):
        meta.pop(k)
    return ScalarField(grid, values), meta


# ---------------------------------------------------------------------------
# generation pipeline


def _source_pair(config: GenerationConfig, grid: Grid, disks):
    """(mean field, std field, truth) for the configured task."""
    if config.task == TASK_MEAN:
        truth = paint_mean(disks, grid)
        return truth, bump_profile(grid), truth
    truth = paint_std(disks, grid)
    return bump_profile(grid), truth, truth


def stage_one_image(kernel_matrices, stage_one_data, grid: Grid, task: str,
                    regularization: float, outer_loops: int) -> ScalarField:
    """Solve the block system and post-process into a stage-one image.

    The variance task solves for the squared standard deviation; the image
    is its pointwise square root with negative values clamped to zero.
    """
    system = BlockSystem.from_kernels(kernel_matrices, stage_one_data, regularization)
    solution = kaczmarz_reconstruct(system, outer_loops=outer_loops)
    if task == TASK_VARIANCE:
        solution = np.sqrt(np.clip(solution, 0.0, None))
    return ScalarField(grid, solution)


def generate_sample(config: GenerationConfig, sample_id: int, grid: Grid,
                    ring, kernel_matrices, fdfd_solvers=None) -> SampleRecord:
    """Simulate, reduce, and invert one sample, fully determined by
    (master_seed, sample_id)."""
    disk_rng = derive_stream(config.master_seed, sample_id, STREAM_DISKS)
    field_rng = derive_stream(config.master_seed, sample_id, STREAM_FIELD_NOISE)
    noise_rng = derive_stream(config.master_seed, sample_id, STREAM_MEASUREMENT_NOISE)

    disks = sample_disks(disk_rng)
    mean_field, std_field, truth = _source_pair(config, grid, disks)

    if config.forward_route == "quadrature":
        tensor = simulate_homogeneous(
            mean_field, std_field, config.wavenumbers, ring, config.realizations,
            field_rng, config.share_noise_across_wavenumbers)
    else:
        medium = None if config.medium == MEDIUM_HOMOGENEOUS else medium_perturbation
        tensor = simulate_medium(
            mean_field, std_field, medium, config.wavenumbers, ring,
            config.realizations, field_rng,
            FdfdConfig(points_per_wavelength=config.fdfd_points_per_wavelength),
            config.share_noise_across_wavenumbers, solvers=fdfd_solvers)

    if config.noise_level > 0:
        tensor = add_noise(tensor, config.noise_level, config.noise_mode, noise_rng)

    data = reduce(tensor, config.task)
    x_field = stage_one_image(kernel_matrices, data, grid, config.task,
                              config.regularization, config.outer_loops)
    metadata = {
        "task": config.task,
        "medium": config.medium,
        "seed": config.master_seed,
        "realizations": config.realizations,
        "noise_level": config.noise_level,
        "noise_mode": config.noise_mode,
        "wavenumbers": [float(k) for k in config.wavenumbers],
        "disks": [{"center": list(d.center), "radius": d.radius, "label": d.label}
                  for d in disks],
    }
    return SampleRecord(sample_id=sample_id, stage_one=x_field, truth=truth,
                        metadata=metadata)


def _generation_context(config: GenerationConfig):
    grid = make_grid(config.grid_n, -1.0, 1.0)
    ring = make_receiver_ring(config.receiver_count, config.receiver_radius)
    kind = "mean" if config.task == TASK_MEAN else "variance"
    kernel_matrices = [assemble(grid, ring, k, kind)
                       for k in sorted(float(k) for k in config.wavenumbers)]
    return grid, ring, kernel_matrices


_WORKER_STATE: dict = {}


def _worker_init(config: GenerationConfig, out_dir: str):
    _WORKER_STATE["config"] = config
    _WORKER_STATE["out"] = Path(out_dir)
    _WORKER_STATE["context"] = _generation_context(config)
    _WORKER_STATE["solvers"] = {}


def _worker_run(sample_id: int):
    config = _WORKER_STATE["config"]
    grid, ring, kernel_matrices = _WORKER_STATE["context"]
    rel = f"samples/sample_{sample_id:06d}.bin"
    try:
        record = generate_sample(config, sample_id, grid, ring, kernel_matrices,
                                 _WORKER_STATE["solvers"])
        write_sample(record, _WORKER_STATE["out"] / rel)
    except (NumericFailure, OSError) as exc:
        return sample_id, None, str(exc)
    return sample_id, rel, None


def generate_dataset(config: GenerationConfig, out_dir, force: bool = False,
                     workers: int = 1) -> DatasetManifest:
    """Generate all samples and write the dataset directory.

    Sample content depends only on (config, sample_id), so the output is
    identical for any worker count.  Failed samples are logged and recorded
    in the manifest rather than aborting the run.
    """
    out = Path(out_dir)
    manifest_path = out / "manifest.json"
    if manifest_path.exists() and not force:
        raise ConfigError(f"{manifest_path} exists; pass force to overwrite")
    (out / "samples").mkdir(parents=True, exist_ok=True)

    results = []
    if workers <= 1:
        _worker_init(config, str(out))
        for sample_id in range(config.sample_count):
            results.append(_worker_run(sample_id))
    else:
        import concurrent.futures as cf
        with cf.ProcessPoolExecutor(max_workers=workers, initializer=_worker_init,
                                    initargs=(config, str(out))) as pool:
            results = list(pool.map(_worker_run, range(config.sample_count)))

    sample_ids, files, failed = [], {}, []
    for sample_id, rel, error in sorted(results):
        if error is not None:
            log.error("sample %d failed: %s", sample_id, error)
            failed.append(sample_id)
            continue
        sample_ids.append(sample_id)
        files[str(sample_id)] = rel
        log.info("sample %d written (%s)", sample_id, rel)

    manifest = DatasetManifest(
        format_version=MANIFEST_FORMAT_VERSION, master_seed=config.master_seed,
        config=config.to_json_dict(), grid_n=config.grid_n,
        sample_ids=sample_ids, files=files, failed_ids=failed, splits={})
    manifest_path.write_text(manifest.to_json())
    return manifest


def split(manifest: DatasetManifest, train_count: int, test_count: int,
          seed: int) -> DatasetManifest:
    """Assign a disjoint deterministic train/test split over available samples."""
    ids = list(manifest.sample_ids)
    if train_count + test_count > len(ids):
        raise ConfigError(
            f"split {train_count}+{test_count} exceeds {len(ids)} samples")
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    manifest.splits = {
        "train": sorted(shuffled[:train_count]),
        "test": sorted(shuffled[train_count:train_count + test_count]),
        "split_seed": seed,
    }
    return manifest


def save_manifest(manifest: DatasetManifest, dataset_dir) -> None:
    (Path(dataset_dir) / "manifest.json").write_text(manifest.to_json())


def load_samples(dataset_dir, ids) -> list[SampleRecord]:
    manifest = load_manifest(dataset_dir)
    base = Path(dataset_dir)
    records = []
    for sample_id in ids:
        rel = manifest.files.get(str(sample_id))
        if rel is None:
            raise DataFormatError(f"sample {sample_id} not present in manifest")
        records.append(read_sample(base / rel))
    return records


def snapshot_matrices(records) -> tuple[np.ndarray, np.ndarray]:
    """Column-stack stage-one images and truths into (n^2, M) matrices."""
    X = np.column_stack([r.stage_one.values for r in records])
    Y = np.column_stack([r.truth.values for r in records])
    return X, Y
