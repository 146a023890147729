"""Grids, receiver rings, and the source/medium profiles used to build datasets.

The source square is [-1, 1] x [-1, 1]; all painted statistics live on a
uniform cell-centered grid over that square.  Receivers sit on a circle
outside the square.  Everything here is immutable after construction and
safe to share across parallel workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SOURCE_LO = -1.0
SOURCE_HI = 1.0

# Painted value per disk label for standard-deviation fields: 1 + label/2.
STD_PAINT_VALUES = {1: 1.5, 2: 2.0, 3: 2.5}

DISK_RADIUS_RANGE = (0.2, 0.4)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centered sampling of the square [lo, hi]^2.

    Cell centers are ordered row-major with the first coordinate varying
    fastest: index c = iy * n + ix maps to (x[ix], y[iy]).  Images reshape
    to (n, n) with rows indexing the second coordinate.
    """

    n: int
    lo: float
    hi: float
    axis: np.ndarray = field(init=False, repr=False, compare=False)
    centers: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"grid needs at least 2 cells per axis, got {self.n}")
        if not (self.hi > self.lo):
            raise ValueError(f"empty grid extent [{self.lo}, {self.hi}]")
        h = self.spacing
        axis = self.lo + h * (0.5 + np.arange(self.n))
        xx, yy = np.meshgrid(axis, axis, indexing="xy")
        centers = np.column_stack([xx.ravel(), yy.ravel()])
        object.__setattr__(self, "axis", _readonly(axis))
        object.__setattr__(self, "centers", _readonly(centers))

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / self.n

    @property
    def cell_area(self) -> float:
        return self.spacing ** 2

    @property
    def cell_count(self) -> int:
        return self.n * self.n


@dataclass(frozen=True)
class ScalarField:
    """Real values co-indexed with the cell centers of a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).ravel()
        if v.size != self.grid.cell_count:
            raise ValueError(
                f"field has {v.size} values for a grid of {self.grid.cell_count} cells"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", _readonly(v))

    def as_image(self) -> np.ndarray:
        """(n, n) view, rows along the second coordinate."""
        return self.values.reshape(self.grid.n, self.grid.n)

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "ScalarField":
        return cls(grid, fn(grid.centers[:, 0], grid.centers[:, 1]))


@dataclass(frozen=True)
class ReceiverRing:
    """count receivers equally spaced on the circle of the given radius."""

    count: int
    radius: float
    points: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.count) != self.count or self.count < 1:
            raise ValueError(f"need at least one receiver, got {self.count}")
        if not (self.radius > 0):
            raise ValueError(f"ring radius must be positive, got {self.radius}")
        angles = 2.0 * np.pi * np.arange(self.count) / self.count
        pts = self.radius * np.column_stack([np.cos(angles), np.sin(angles)])
        object.__setattr__(self, "points", _readonly(pts))


@dataclass(frozen=True)
class DiskSpec:
    """One inclusion disk, fully contained in the source square."""

    center: tuple[float, float]
    radius: float
    label: int

    def __post_init__(self):
        rmin, rmax = DISK_RADIUS_RANGE
        if not (rmin <= self.radius <= rmax):
            raise ValueError(f"disk radius {self.radius} outside [{rmin}, {rmax}]")
        if self.label not in (1, 2, 3):
            raise ValueError(f"disk label must be 1, 2 or 3, got {self.label}")
        a, b = self.center
        bound = 1.0 - self.radius
        if abs(a) > bound or abs(b) > bound:
            raise ValueError(f"disk at {self.center} with radius {self.radius} leaves the square")


def make_grid(n: int, lo: float, hi: float) -> Grid:
    return Grid(n=n, lo=lo, hi=hi)


def make_receiver_ring(count: int, radius: float) -> ReceiverRing:
    return ReceiverRing(count=count, radius=radius)


def sample_disks(rng: np.random.Generator) -> list[DiskSpec]:
    """Draw three random disks: radius uniform on [0.2, 0.4], center uniform
    in the range keeping the disk inside the square.  Disks may overlap.

    Draw order is fixed (radius then the two center coordinates, label by
    label) so a given stream always yields the same triple.
    """
    disks = []
    rmin, rmax = DISK_RADIUS_RANGE
    for label in (1, 2, 3):
        r = rng.uniform(rmin, rmax)
        a = rng.uniform(-1.0 + r, 1.0 - r)
        b = rng.uniform(-1.0 + r, 1.0 - r)
        disks.append(DiskSpec(center=(a, b), radius=r, label=label))
    return disks


def _paint(disks, grid: Grid, value_of) -> ScalarField:
    # Successive painting: the last disk containing a cell wins.
    values = np.zeros(grid.cell_count)
    cx = grid.centers[:, 0]
    cy = grid.centers[:, 1]
    for d in disks:
        inside = (cx - d.center[0]) ** 2 + (cy - d.center[1]) ** 2 < d.radius ** 2
        values[inside] = value_of(d)
    return ScalarField(grid, values)


def paint_mean(disks: list[DiskSpec], grid: Grid) -> ScalarField:
    """Background 0, value = label inside each disk, painted in label order."""
    return _paint(disks, grid, lambda d: float(d.label))


def paint_std(disks: list[DiskSpec], grid: Grid) -> ScalarField:
    """Background 0, value = 1 + label/2 inside each disk, painted in label order."""
    return _paint(disks, grid, lambda d: STD_PAINT_VALUES[d.label])


def bump_values(x1, x2):
    """Fixed radial bump profile: 0.6 * exp(-8 [(r^2)^1.5 - 0.75 r^2]).

    Peaks at 0.6 for r = 0 and r = 0.75, decays fast beyond r = 1.
    """
    r2 = np.asarray(x1) ** 2 + np.asarray(x2) ** 2
    return 0.6 * np.exp(-8.0 * (r2 ** 1.5 - 0.75 * r2))


def bump_profile(grid: Grid) -> ScalarField:
    """The fixed radial bump sampled at the cell centers."""
    return ScalarField.from_function(grid, bump_values)


def medium_perturbation(x1, x2):
    """Relative-permittivity perturbation: a three-lobe profile q(3 x1, 3 x2) with

    q(x) = 0.5 [0.3 (1-x1)^2 e^{-x1^2-(x2+1)^2}
                - (0.2 x1 - x1^3 - x2^5) e^{-x1^2-x2^2}
                - 0.03 e^{-(x1+1)^2-x2^2}].
    """
    u = 3.0 * np.asarray(x1, dtype=np.float64)
    v = 3.0 * np.asarray(x2, dtype=np.float64)
    q = 0.5 * (
        0.3 * (1.0 - u) ** 2 * np.exp(-u ** 2 - (v + 1.0) ** 2)
        - (0.2 * u - u ** 3 - v ** 5) * np.exp(-u ** 2 - v ** 2)
        - 0.03 * np.exp(-(u + 1.0) ** 2 - v ** 2)
    )
    return q


# Fixed geometry for the two out-of-distribution test fields.  The constants
# are design choices, kept here so the samples are reproducible.
FIVE_DISKS = (
    ((-0.55, -0.55), 0.25, 1),
    ((0.55, -0.55), 0.22, 2),
    ((-0.55, 0.55), 0.22, 3),
    ((0.55, 0.55), 0.25, 1),
    ((0.0, 0.0), 0.28, 2),
)

PHANTOM_OUTER = ((0.0, 0.0), (0.78, 0.58), 1.0)  # center, semi-axes, value
PHANTOM_INNER = (
    ((-0.28, 0.12), (0.16, 0.26), 2.0),
    ((0.28, 0.12), (0.16, 0.26), 3.0),
)


def generalization_samples(grid: Grid) -> list[ScalarField]:
    """Two deterministic mean fields outside the training distribution:
    five well-separated disks, and a phantom of nested ellipses."""
    disks = [DiskSpec(center=c, radius=r, label=l) for c, r, l in FIVE_DISKS]
    five = _paint(disks, grid, lambda d: float(d.label))

    values = np.zeros(grid.cell_count)
    cx = grid.centers[:, 0]
    cy = grid.centers[:, 1]
    for (ex, ey), (sa, sb), val in (PHANTOM_OUTER, *PHANTOM_INNER):
        inside = ((cx - ex) / sa) ** 2 + ((cy - ey) / sb) ** 2 < 1.0
        values[inside] = val
    phantom = ScalarField(grid, values)
    return [five, phantom]
