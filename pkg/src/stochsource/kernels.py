"""Discretized boundary kernels linking source statistics to measured data.

For each wavenumber two real matrices are assembled by midpoint quadrature
over the source grid (kernel value at the cell center times cell area):

* mean kind:     entry(r, c) = Re G(x_r, y_c, k) * cell_area
* variance kind: entry(r, c) = (Re^2 G - Im^2 G)(x_r, y_c, k) * cell_area

The mean matrix applied to a mean field reproduces the expected real part
of the measured wave; the variance matrix applied to the squared standard
deviation reproduces the variance gap between real and imaginary parts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Grid, ReceiverRing
from .special import bessel_j0, bessel_y0

KIND_MEAN = "mean"
KIND_VARIANCE = "variance"
KINDS = (KIND_MEAN, KIND_VARIANCE)


@dataclass(frozen=True)
class KernelMatrix:
    wavenumber: float
    kind: str
    entries: np.ndarray  # (ring.count, grid.n^2), float64
    grid: Grid
    ring: ReceiverRing


def receiver_cell_distances(grid: Grid, ring: ReceiverRing) -> np.ndarray:
    """(count, n^2) matrix of receiver-to-cell-center distances."""
    diff = ring.points[:, None, :] - grid.centers[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=2))


def assemble(grid: Grid, ring: ReceiverRing, wavenumber: float, kind: str) -> KernelMatrix:
    if kind not in KINDS:
        raise ValueError(f"unknown kernel kind {kind!r}")
    if not (wavenumber > 0):
        raise ValueError(f"wavenumber must be positive, got {wavenumber}")
    px, py = ring.points[:, 0], ring.points[:, 1]
    in_closure = (px >= grid.lo) & (px <= grid.hi) & (py >= grid.lo) & (py <= grid.hi)
    if np.any(in_closure):
        bad = np.flatnonzero(in_closure)
        raise ValueError(
            f"receivers {bad.tolist()} lie inside or on the source square; "
            "the kernel would be singular"
        )
    kr = wavenumber * receiver_cell_distances(grid, ring)
    if kind == KIND_MEAN:
        entries = 0.25 * bessel_y0(kr) * grid.cell_area
    else:
        y = bessel_y0(kr)
        j = bessel_j0(kr)
        # Re^2 G - Im^2 G = (Y0^2 - J0^2)/16
        entries = (y * y - j * j) / 16.0 * grid.cell_area
    entries = np.ascontiguousarray(entries)
    entries.setflags(write=False)
    return KernelMatrix(wavenumber=wavenumber, kind=kind, entries=entries, grid=grid, ring=ring)


def export_kernel(matrix: KernelMatrix, path) -> None:
    """Raw little-endian float64 row-major dump plus a JSON sidecar."""
    path = Path(path)
    payload = matrix.entries.astype("<f8").tobytes(order="C")
    path.write_bytes(payload)
    sidecar = {
        "shape": list(matrix.entries.shape),
        "dtype": "<f8",
        "order": "C",
        "wavenumber": matrix.wavenumber,
        "kind": matrix.kind,
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2))
