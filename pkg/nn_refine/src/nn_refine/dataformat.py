"""Reader/writer for the shared dataset contract (see FORMATS.md in the
pipeline repository).

Sample files:  magic "SRCSAMP1", payload, u32 CRC32(payload); payload is
u32 version, u32 meta length, UTF-8 JSON metadata, then two length-
prefixed little-endian float64 arrays (stage-one image X, truth image Y).
Field files:   magic "SRCFLD01", same payload layout with one array.
All training consumes only the (X, Y) images; metadata rides along for
bookkeeping but never conditions the models.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SAMPLE_MAGIC = b"SRCSAMP1"
FIELD_MAGIC = b"SRCFLD01"
FORMAT_VERSION = 1


class FormatError(RuntimeError):
    pass


@dataclass
class Sample:
    sample_id: int
    stage_one: np.ndarray  # (n, n)
    truth: np.ndarray      # (n, n)
    metadata: dict


def _read_checked(path: Path, magic: bytes) -> bytes:
    blob = Path(path).read_bytes()
    if len(blob) < len(magic) + 8 or blob[: len(magic)] != magic:
        raise FormatError(f"{path}: bad magic")
    payload = blob[len(magic):-4]
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise FormatError(f"{path}: checksum mismatch")
    return payload


def _parse_payload(payload: bytes, n_arrays: int, what: str):
    off = 0
    (version,) = struct.unpack_from("<I", payload, off); off += 4
    if version != FORMAT_VERSION:
        raise FormatError(f"{what}: unsupported format version {version}")
    (mlen,) = struct.unpack_from("<I", payload, off); off += 4
    meta = json.loads(payload[off:off + mlen].decode("utf-8")); off += mlen
    arrays = []
    for _ in range(n_arrays):
        (count,) = struct.unpack_from("<I", payload, off); off += 4
        arrays.append(np.frombuffer(payload, dtype="<f8", count=count, offset=off).copy())
        off += 8 * count
    if off != len(payload):
        raise FormatError(f"{what}: trailing bytes")
    return meta, arrays


def read_sample(path) -> Sample:
    meta, (x, y) = _parse_payload(_read_checked(Path(path), SAMPLE_MAGIC), 2, str(path))
    n = meta["grid_n"]
    return Sample(sample_id=meta["id"], stage_one=x.reshape(n, n),
                  truth=y.reshape(n, n), metadata=meta)


def write_field(values: np.ndarray, path, metadata: dict) -> None:
    """Write a prediction in the shared field format; metadata must carry
    grid_n / grid_lo / grid_hi so the evaluator can rebuild the grid."""
    meta_bytes = json.dumps(metadata, sort_keys=True).encode("utf-8")
    flat = np.ascontiguousarray(values, dtype="<f8").ravel()
    payload = b"".join([
        struct.pack("<I", FORMAT_VERSION),
        struct.pack("<I", len(meta_bytes)), meta_bytes,
        struct.pack("<I", flat.size), flat.tobytes(),
    ])
    with open(path, "wb") as f:
        f.write(FIELD_MAGIC)
        f.write(payload)
        f.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def read_field(path) -> tuple[np.ndarray, dict]:
    meta, (values,) = _parse_payload(_read_checked(Path(path), FIELD_MAGIC), 1, str(path))
    n = meta["grid_n"]
    return values.reshape(n, n), meta


@dataclass
class Dataset:
    root: Path
    manifest: dict

    @classmethod
    def open(cls, root) -> "Dataset":
        root = Path(root)
        try:
            manifest = json.loads((root / "manifest.json").read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise FormatError(f"cannot read manifest under {root}: {exc}") from exc
        return cls(root=root, manifest=manifest)

    @property
    def grid_n(self) -> int:
        return self.manifest["grid_n"]

    def split_ids(self, name: str) -> list[int]:
        ids = self.manifest.get("splits", {}).get(name)
        if not ids:
            raise FormatError(f"dataset has no split {name!r}")
        return list(ids)

    def load(self, sample_id: int) -> Sample:
        rel = self.manifest["files"].get(str(sample_id))
        if rel is None:
            raise FormatError(f"sample {sample_id} missing from manifest")
        return read_sample(self.root / rel)

    def load_split(self, name: str) -> list[Sample]:
        return [self.load(i) for i in self.split_ids(name)]
