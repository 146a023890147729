import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochsource.geometry import (DiskSpec, ScalarField, bump_profile,
                                  bump_values, generalization_samples,
                                  make_grid, make_receiver_ring,
                                  medium_perturbation, paint_mean, paint_std,
                                  sample_disks)


class TestGrid:
    def test_two_by_two(self):
        g = make_grid(2, -1, 1)
        assert g.cell_area == 1.0
        expected = [(-0.5, -0.5), (0.5, -0.5), (-0.5, 0.5), (0.5, 0.5)]
        assert np.allclose(g.centers, expected)

    def test_64_cell_area_and_first_center(self):
        g = make_grid(64, -1, 1)
        assert g.cell_area == pytest.approx((2 / 64) ** 2)
        assert g.centers[0] == pytest.approx([-1 + 1 / 64, -1 + 1 / 64])

    def test_shifted_extent(self):
        g = make_grid(3, 0, 3)
        assert np.allclose(g.axis, [0.5, 1.5, 2.5])

    @given(n=st.integers(2, 40), lo=st.floats(-5, 2), width=st.floats(0.1, 10))
    @settings(max_examples=50, deadline=None)
    def test_invariants(self, n, lo, width):
        g = make_grid(n, lo, lo + width)
        assert g.centers.shape == (n * n, 2)
        assert g.cell_area > 0
        # first center half a cell in, exact uniform spacing
        assert g.centers[0][0] == pytest.approx(lo + g.spacing / 2)
        diffs = np.diff(g.axis)
        assert np.allclose(diffs, g.spacing, rtol=1e-12)
        assert np.all(g.centers > lo) and np.all(g.centers < lo + width)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            make_grid(1, -1, 1)
        with pytest.raises(ValueError):
            make_grid(4, 1, 1)
        with pytest.raises(ValueError):
            make_grid(4, 2, -2)


class TestReceiverRing:
    def test_reference_points(self):
        ring = make_receiver_ring(32, 2.0)
        assert ring.points[0] == pytest.approx([2.0, 0.0])
        assert ring.points[8] == pytest.approx([0.0, 2.0], abs=1e-12)

    def test_all_radii_match(self):
        ring = make_receiver_ring(32, 2.0)
        radii = np.linalg.norm(ring.points, axis=1)
        assert np.allclose(radii, 2.0, rtol=1e-12)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            make_receiver_ring(0, 2.0)
        with pytest.raises(ValueError):
            make_receiver_ring(8, 0.0)


class TestDisks:
    def test_bounds_and_determinism(self):
        a = sample_disks(np.random.default_rng(99))
        b = sample_disks(np.random.default_rng(99))
        for da, db in zip(a, b):
            assert da == db
        for d in a:
            assert 0.2 <= d.radius <= 0.4
            assert abs(d.center[0]) + d.radius <= 1.0 + 1e-12
            assert abs(d.center[1]) + d.radius <= 1.0 + 1e-12

    def test_many_seeds_stay_inside(self):
        for seed in range(50):
            for d in sample_disks(np.random.default_rng(seed)):
                assert abs(d.center[0]) + d.radius <= 1.0 + 1e-12
                assert abs(d.center[1]) + d.radius <= 1.0 + 1e-12

    def test_disk_spec_validation(self):
        with pytest.raises(ValueError):
            DiskSpec(center=(0, 0), radius=0.5, label=1)
        with pytest.raises(ValueError):
            DiskSpec(center=(0.9, 0), radius=0.3, label=1)
        with pytest.raises(ValueError):
            DiskSpec(center=(0, 0), radius=0.3, label=4)


class TestPainting:
    def test_background_and_overlap(self, grid64):
        d1 = DiskSpec(center=(-0.3, 0.0), radius=0.4, label=1)
        d3 = DiskSpec(center=(-0.1, 0.0), radius=0.3, label=3)
        fld = paint_mean([d1, d3], grid64)
        img = fld.as_image()
        # cell near (-0.55, 0): inside d1 only
        ix = np.argmin(np.abs(grid64.axis + 0.55))
        iy = np.argmin(np.abs(grid64.axis))
        assert img[iy, ix] == 1.0
        # cell near (-0.15, 0): overlap, later paint wins
        ix = np.argmin(np.abs(grid64.axis + 0.15))
        assert img[iy, ix] == 3.0
        # far corner outside both
        assert img[0, 63] == 0.0

    def test_std_values(self, grid64):
        d2 = DiskSpec(center=(0.2, 0.2), radius=0.3, label=2)
        fld = paint_std([d2], grid64)
        assert set(np.unique(fld.values)) == {0.0, 2.0}
        d3 = DiskSpec(center=(0.2, 0.2), radius=0.25, label=3)
        fld = paint_std([d2, d3], grid64)
        ix = np.argmin(np.abs(grid64.axis - 0.2))
        assert fld.as_image()[ix, ix] == 2.5

    def test_successive_overwrite_covering_grid(self, grid32):
        # radius capped at 0.4; carpet the square with label-1 disks, then
        # overwrite the center with a label-2 disk: overlap region reads 2.
        ones = [DiskSpec(center=(x, y), radius=0.4, label=1)
                for x in (-0.5, 0.0, 0.5) for y in (-0.5, 0.0, 0.5)]
        two = DiskSpec(center=(0.0, 0.0), radius=0.4, label=2)
        fld = paint_mean(ones + [two], grid32)
        cx = grid32.centers[:, 0]
        cy = grid32.centers[:, 1]
        inside_two = cx ** 2 + cy ** 2 < 0.4 ** 2
        assert np.all(fld.values[inside_two] == 2.0)

    def test_idempotent(self, grid32, rng):
        disks = sample_disks(rng)
        f1 = paint_mean(disks, grid32)
        f2 = paint_mean(disks, grid32)
        assert np.array_equal(f1.values, f2.values)


class TestProfiles:
    def test_bump_reference_values(self):
        assert bump_values(0.0, 0.0) == pytest.approx(0.6)
        # (r^2)^1.5 = 0.75 r^2 exactly at r = 0.75
        assert bump_values(0.75, 0.0) == pytest.approx(0.6, rel=1e-12)
        assert bump_values(1.0, 0.0) == pytest.approx(0.6 * math.exp(-2.0), rel=1e-12)

    def test_bump_radial_symmetry(self, grid64):
        fld = bump_profile(grid64)
        r = np.linalg.norm(grid64.centers, axis=1)
        order = np.argsort(r)
        rs, vs = r[order], fld.values[order]
        same = np.isclose(rs[1:], rs[:-1], rtol=1e-12)
        assert np.allclose(vs[1:][same], vs[:-1][same], rtol=1e-12)

    def test_medium_reference_values(self):
        assert medium_perturbation(0.0, 0.0) == pytest.approx(
            0.135 * math.exp(-1.0), rel=1e-12)
        # dominated by the 26.4 e^{-9} term
        expected = 0.5 * (0.3 * 4 * math.exp(-10) + 26.4 * math.exp(-9)
                          - 0.03 * math.exp(-16))
        assert medium_perturbation(1.0, 0.0) == pytest.approx(expected, rel=1e-12)
        assert abs(medium_perturbation(1.0, 0.0) - 0.0016) < 2e-4

    def test_medium_decay(self):
        angles = np.linspace(0, 2 * np.pi, 17)
        for rad in (3.0, 4.0, 6.0):
            vals = medium_perturbation(rad * np.cos(angles), rad * np.sin(angles))
            assert np.all(np.abs(vals) < 1e-6)


class TestGeneralizationSamples:
    def test_five_connected_regions(self, grid64):
        five, _ = generalization_samples(grid64)
        img = five.as_image() > 0
        # label connected components with a simple flood fill
        seen = np.zeros_like(img, dtype=bool)
        regions = 0
        for start in zip(*np.nonzero(img & ~seen)):
            if seen[start]:
                continue
            regions += 1
            stack = [start]
            while stack:
                i, j = stack.pop()
                if not (0 <= i < 64 and 0 <= j < 64) or seen[i, j] or not img[i, j]:
                    continue
                seen[i, j] = True
                stack.extend([(i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)])
        assert regions == 5

    def test_phantom_background(self, grid64):
        _, phantom = generalization_samples(grid64)
        cx = grid64.centers[:, 0]
        cy = grid64.centers[:, 1]
        outside = (cx / 0.78) ** 2 + (cy / 0.58) ** 2 >= 1.0
        assert np.all(phantom.values[outside] == 0.0)
        assert set(np.unique(phantom.values)) == {0.0, 1.0, 2.0, 3.0}

    def test_deterministic(self, grid64):
        a = generalization_samples(grid64)
        b = generalization_samples(grid64)
        for fa, fb in zip(a, b):
            assert np.array_equal(fa.values, fb.values)


class TestScalarField:
    def test_rejects_wrong_length(self, grid32):
        with pytest.raises(ValueError):
            ScalarField(grid32, np.zeros(10))

    def test_rejects_nonfinite(self, grid32):
        values = np.zeros(grid32.cell_count)
        values[0] = np.nan
        with pytest.raises(ValueError):
            ScalarField(grid32, values)

    def test_image_layout(self, grid32):
        values = np.arange(grid32.cell_count, dtype=float)
        img = ScalarField(grid32, values).as_image()
        # index = iy * n + ix
        assert img[1, 0] == 32.0
        assert img[0, 1] == 1.0
