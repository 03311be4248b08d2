import math
from functools import partial

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.errors import InvalidInputError
from src.geometry import PixelSet
from src.oracle import grid_leaf_table
from src.partitions import Partition, enumerate_partitions
from src.prior import (
    PriorModel,
    leaf_prob_table,
    leaf_ratio,
    prior_ordered,
    prior_unordered,
    reduce_modulo,
    region_area,
)
from src.specfun import RadiusLaw

TWO = PixelSet.from_points([(0, 0), (1, 0)])
L_SHAPE = PixelSet.from_points([(0, 0), (1, 0), (0, 1)])


def lens_area(r, d):
    return 2 * r * r * math.acos(d / (2 * r)) - 0.5 * d * math.sqrt(4 * r * r - d * d)


def raster_areas(a: PixelSet, r: float, step: float = 0.004) -> np.ndarray:
    """Area of exact leaf footprints for every subset, by counting grid cells."""
    lo = a.coords.min(axis=0) - r
    hi = a.coords.max(axis=0) + r
    xs = np.arange(lo[0] + step / 2, hi[0], step)
    ys = np.arange(lo[1] + step / 2, hi[1], step)
    gx, gy = np.meshgrid(xs, ys)
    bits = np.int64(1) << np.arange(len(a), dtype=np.int64)
    footprint = np.zeros(gx.shape, dtype=np.int64)
    for k, (x, y) in enumerate(a.coords):
        footprint |= np.where(np.hypot(gx - x, gy - y) <= r, bits[k], 0)
    counts = np.bincount(footprint.ravel(), minlength=1 << len(a))
    return counts * step * step


class TestReduceModulo:
    def test_wraps_near_period_and_clamps(self):
        period = 2.0
        out = reduce_modulo(np.array([0.5, 2.5, -0.5, 2.0 - 1e-12, -1e-12, 4.0]), period)
        assert_allclose(out, [0.5, 0.5, 1.5, 0.0, 0.0, 0.0], atol=1e-15)


class TestRegionArea:
    @pytest.mark.parametrize("d, r", [(1.0, 0.7), (1.0, 1.3), (0.6, 1.9)])
    def test_two_pixel_lens(self, d, r):
        a = PixelSet.from_points([(0, 0), (d, 0)])
        lens = lens_area(r, d)
        assert region_area(a, 0b11, r) == pytest.approx(lens, rel=1e-10)
        assert region_area(a, 0b01, r) == pytest.approx(math.pi * r * r - lens, rel=1e-10)

    def test_isolated_disks(self):
        assert region_area(L_SHAPE, 0b001, 0.4) == pytest.approx(math.pi * 0.16)
        assert region_area(L_SHAPE, 0b011, 0.4) == 0.0

    @pytest.mark.parametrize("r", [0.6, 0.9, 1.3])
    def test_against_raster(self, r):
        raster = raster_areas(L_SHAPE, r)
        for v in range(1, 8):
            assert region_area(L_SHAPE, v, r) == pytest.approx(raster[v], abs=0.02)

    def test_square_against_raster(self):
        a = PixelSet.grid(2, 2)
        raster = raster_areas(a, 1.3)
        for v in range(1, 16):
            assert region_area(a, v, 1.3) == pytest.approx(raster[v], abs=0.03)

    def test_empty_subset(self):
        with pytest.raises(InvalidInputError):
            region_area(TWO, 0, 1.0)


class TestLeafTable:
    def test_single_pixel(self, law):
        table = leaf_prob_table(PixelSet.from_points([(3, 4)]), law)
        assert table.mass(1) == pytest.approx(2 * math.pi * math.log(2.0))
        assert table.ratio(1) == 1.0

    def test_far_pixels_never_share_a_leaf(self, law):
        table = leaf_prob_table(PixelSet.from_points([(0, 0), (10, 0)]), law)
        assert table.mass(0b11) == 0.0
        assert table.mass(0b01) == pytest.approx(2 * math.pi * math.log(2.0))

    def test_two_pixels_match_integrated_lens(self, law):
        from scipy import integrate

        table = leaf_prob_table(TWO, law)
        pair, _ = integrate.quad(lambda r: 2 * r ** -3 * lens_area(r, 1.0), 1.0, 2.0)
        single, _ = integrate.quad(lambda r: 2 * r ** -3 * (math.pi * r * r - lens_area(r, 1.0)), 1.0, 2.0)
        assert table.mass(0b11) == pytest.approx(pair, rel=1e-9)
        assert table.mass(0b01) == pytest.approx(single, rel=1e-9)
        assert table.nonempty_mass == pytest.approx(pair + 2 * single, rel=1e-9)

    def test_diagonal_pairs_have_no_mass(self, law):
        table = leaf_prob_table(PixelSet.grid(2, 2), law)
        assert table.mass(0b1001) == 0.0
        assert table.mass(0b0110) == 0.0
        assert np.all(table.masses >= 0.0)

    def test_masses_read_only_and_json(self, law):
        table = leaf_prob_table(TWO, law)
        with pytest.raises(ValueError):
            table.masses[1] = 0.0
        assert set(table.to_json()) == {"1", "2", "3"}

    def test_limits(self, law):
        with pytest.raises(InvalidInputError):
            leaf_prob_table(PixelSet(()), law)
        with pytest.raises(InvalidInputError):
            leaf_prob_table(PixelSet.grid(7, 3), law)

    def test_frame_size_does_not_matter(self, grid3):
        a = leaf_prob_table(grid3, RadiusLaw(1.0, 2.0, 0.0))
        b = leaf_prob_table(grid3, RadiusLaw(1.0, 2.0, 100.0))
        assert np.array_equal(a.masses, b.masses)


class TestWorkedExample:
    def test_ordered_prior(self, example, law):
        res = prior_ordered(example.partition, example.window.pixels, law)
        assert res.mode == "ordered"
        assert res.value == pytest.approx(7.437e-4, rel=0.01)

    def test_layer_ratios(self, example, law):
        layers = PriorModel(example.window.pixels, law).layers(example.partition)
        (m1, n1), (m2, n2), (m3, n3) = layers
        assert m1 / n1 == pytest.approx(0.209 / 7.578, rel=0.01)
        assert m2 / n2 == pytest.approx(0.161 / 5.959, rel=0.01)
        assert m3 / n3 == 1.0

    def test_leaf_ratio(self, example, law):
        v1 = example.partition.blocks[0]
        assert leaf_ratio(example.window.pixels, v1, law) == pytest.approx(0.209 / 7.578, rel=0.01)


class TestPartitionPrior:
    @pytest.mark.parametrize("pixels", [
        TWO,
        L_SHAPE,
        PixelSet.grid(2, 2),
        PixelSet.grid(3, 2),
        PixelSet.from_points([(0, 0), (1.3, 0.2), (0.4, 1.1), (2.0, 1.7)]),
    ])
    def test_priors_sum_to_one(self, pixels, law):
        model = PriorModel(pixels, law)
        total = math.fsum(model.prior_unordered(p).value for p in enumerate_partitions(pixels))
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_two_pixels(self, law):
        model = PriorModel(TWO, law)
        together = model.prior_unordered(Partition((0b11,))).value
        apart = model.prior_unordered(Partition((0b01, 0b10))).value
        assert apart == pytest.approx(0.619, abs=0.01)
        assert together + apart == pytest.approx(1.0)
        assert max(together, apart) == pytest.approx(0.6, abs=0.05)

    def test_unordered_sums_depth_orders(self, law):
        model = PriorModel(L_SHAPE, law)
        blocks = (0b001, 0b110)
        ordered = sum(
            model.prior_ordered(Partition(order, ordered=True)).value
            for order in [blocks, blocks[::-1]]
        )
        assert model.prior_unordered(Partition(blocks)).value == pytest.approx(ordered, rel=1e-12)

    def test_diagonal_partition_is_zero(self, law):
        a = PixelSet.grid(2, 2)
        diagonal = Partition((0b1001, 0b0110))
        assert prior_unordered(diagonal, a, law).value == 0.0
        assert prior_unordered(diagonal, a, law).log_value == -math.inf

    def test_square_maximum(self, law):
        a = PixelSet.grid(2, 2)
        model = PriorModel(a, law)
        best = max(model.prior_unordered(p).value for p in enumerate_partitions(a))
        assert best == pytest.approx(0.16, abs=0.02)

    @pytest.mark.slow
    def test_3x3_maximum(self, grid3, law):
        model = PriorModel(grid3, law)
        best = max(math.exp(model.log_prior_unordered(p)) for p in enumerate_partitions(grid3))
        assert best == pytest.approx(0.005, abs=0.002)

    @pytest.mark.parametrize("k", range(8))
    def test_dihedral_invariance(self, k, law):
        a = PixelSet.grid(3, 2)
        moved = a.transformed(k)
        base, turned = PriorModel(a, law), PriorModel(moved, law)
        for p in list(enumerate_partitions(a))[::7]:
            assert turned.prior_unordered(p).value == pytest.approx(base.prior_unordered(p).value, rel=1e-9, abs=1e-12)

    @pytest.mark.parametrize("k", range(8))
    def test_dihedral_invariance_on_square(self, k, law):
        a = PixelSet.grid(2, 2)
        base, turned = PriorModel(a, law), PriorModel(a.transformed(k), law)
        for p in enumerate_partitions(a):
            assert turned.prior_unordered(p).value == pytest.approx(base.prior_unordered(p).value, rel=1e-10, abs=1e-13)

    @pytest.mark.slow
    @pytest.mark.parametrize("k", [1, 2, 5])
    def test_dihedral_invariance_on_3x3(self, k, grid3, law):
        base, turned = PriorModel(grid3, law), PriorModel(grid3.transformed(k), law)
        for p in list(enumerate_partitions(grid3))[::211]:
            assert turned.prior_unordered(p).value == pytest.approx(base.prior_unordered(p).value, rel=1e-10, abs=1e-13)

    def test_translation_invariance(self, law):
        shifted = PixelSet.from_points([(x + 10.0, y - 3.0) for x, y in L_SHAPE])
        for p in enumerate_partitions(L_SHAPE):
            assert prior_unordered(p, shifted, law).value == pytest.approx(
                prior_unordered(p, L_SHAPE, law).value, rel=1e-9)

    def test_memoization_does_not_change_results(self, law):
        a = PixelSet.grid(2, 2)
        cached, plain = PriorModel(a, law), PriorModel(a, law, memoize=False)
        for p in enumerate_partitions(a):
            assert cached.log_prior_unordered(p) == plain.log_prior_unordered(p)

    def test_prefetch_with_threads(self, law):
        a = PixelSet.grid(2, 2)
        threaded, serial = PriorModel(a, law), PriorModel(a, law)
        threaded.prefetch(range(1, 16), threads=4)
        for p in enumerate_partitions(a):
            assert threaded.log_prior_unordered(p) == serial.log_prior_unordered(p)

    def test_cover_is_checked(self, law):
        with pytest.raises(InvalidInputError):
            PriorModel(TWO, law).prior_unordered(Partition((0b01,)))

    def test_grid_tables_drive_the_recursion(self, law):
        builder = partial(grid_leaf_table, pos_res=300)
        analytic, gridded = PriorModel(L_SHAPE, law), PriorModel(L_SHAPE, law, table_builder=builder)
        for p in enumerate_partitions(L_SHAPE):
            assert gridded.prior_unordered(p).value == pytest.approx(
                analytic.prior_unordered(p).value, rel=0.02, abs=1e-3)
