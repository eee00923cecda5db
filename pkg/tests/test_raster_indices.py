import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ndsseg.errors import ShapeError, ValidationError
from ndsseg.raster import (
    IndexKind,
    InputRepresentation,
    Raster,
    build_representation,
    compute_index,
)

from conftest import make_rgbn


def pixel_raster(red=0.0, green=0.0, blue=0.0, nir=0.0):
    return Raster(np.array([[[red, green, blue, nir]]], dtype=np.float32))


class TestRasterInvariants:
    def test_dims_and_channels(self, rng):
        r = make_rgbn(rng, 5, 7)
        assert (r.height, r.width, r.channels) == (5, 7, 4)

    def test_rejects_nan(self):
        arr = np.zeros((2, 2, 1), dtype=np.float32)
        arr[0, 0, 0] = np.nan
        with pytest.raises(ValidationError):
            Raster(arr)

    def test_rejects_empty(self):
        with pytest.raises(ShapeError):
            Raster(np.zeros((0, 3, 1), dtype=np.float32))

    def test_two_dim_input_promoted_to_one_channel(self):
        assert Raster(np.zeros((4, 4), dtype=np.float32)).channels == 1


class TestComputeIndex:
    def test_ndvi_hand_value(self):
        # (0.8 - 0.2) / (0.8 + 0.2) = 0.6
        r = pixel_raster(red=0.2, nir=0.8)
        assert compute_index(IndexKind.NDVI, r).values[0, 0, 0] == pytest.approx(0.6)

    def test_gndvi_hand_value(self):
        r = pixel_raster(green=0.25, nir=0.75)
        assert compute_index(IndexKind.GNDVI, r).values[0, 0, 0] == pytest.approx(0.5)

    def test_ndwi_hand_value(self):
        r = pixel_raster(green=0.75, nir=0.25)
        assert compute_index(IndexKind.NDWI, r).values[0, 0, 0] == pytest.approx(0.5)

    @pytest.mark.parametrize("x", [0.1, 0.5, 1.0])
    def test_ndvi_symmetry_zero(self, x):
        r = pixel_raster(red=x, nir=x)
        assert compute_index(IndexKind.NDVI, r).values[0, 0, 0] == 0.0

    def test_zero_denominator_maps_to_zero(self):
        r = pixel_raster()
        for kind in IndexKind:
            assert compute_index(kind, r).values[0, 0, 0] == 0.0

    def test_wrong_channel_count(self, rng):
        rgb = Raster(rng.uniform(size=(4, 4, 3)).astype(np.float32))
        with pytest.raises(ShapeError):
            compute_index(IndexKind.NDVI, rgb)

    def test_output_dims_match(self, rng):
        r = make_rgbn(rng, 9, 13)
        out = compute_index(IndexKind.GNDVI, r)
        assert (out.height, out.width, out.channels) == (9, 13, 1)

    @given(arrays(np.float32, (6, 6, 4), elements=st.floats(0, 1, width=32)))
    @settings(max_examples=50, deadline=None)
    def test_range_and_ndwi_negation(self, arr):
        r = Raster(arr)
        for kind in IndexKind:
            v = compute_index(kind, r).values
            assert np.all(v >= -1.0) and np.all(v <= 1.0)
        gndvi = compute_index(IndexKind.GNDVI, r).values
        ndwi = compute_index(IndexKind.NDWI, r).values
        np.testing.assert_array_equal(np.abs(gndvi), np.abs(ndwi))
        np.testing.assert_allclose(ndwi, -gndvi, atol=0)

    def test_row_permutation_equivariance(self, rng):
        r = make_rgbn(rng, 8, 8)
        perm = rng.permutation(8)
        permuted = Raster(r.values[perm])
        for kind in IndexKind:
            base = compute_index(kind, r).values
            out = compute_index(kind, permuted).values
            np.testing.assert_array_equal(out, base[perm])


class TestBuildRepresentation:
    def test_channel_counts(self, rng):
        r = make_rgbn(rng, 16, 16)
        for repr_kind in InputRepresentation:
            out = build_representation(r, repr_kind)
            assert out.channels == repr_kind.channel_count

    def test_rgb_copies_first_three_channels(self, rng):
        r = make_rgbn(rng)
        out = build_representation(r, InputRepresentation.RGB)
        np.testing.assert_array_equal(out.values, r.values[:, :, :3])

    def test_rgb_never_reads_nir(self, rng):
        r = make_rgbn(rng)
        mutated = np.array(r.values)
        mutated[:, :, 3] = 1.0 - mutated[:, :, 3]
        out_a = build_representation(r, InputRepresentation.RGB)
        out_b = build_representation(Raster(mutated), InputRepresentation.RGB)
        np.testing.assert_array_equal(out_a.values, out_b.values)

    def test_index_triple_order(self, rng):
        r = make_rgbn(rng)
        out = build_representation(r, InputRepresentation.INDEX_TRIPLE)
        np.testing.assert_array_equal(out.values[:, :, 0],
                                      compute_index(IndexKind.NDVI, r).values[:, :, 0])
        np.testing.assert_array_equal(out.values[:, :, 1],
                                      compute_index(IndexKind.GNDVI, r).values[:, :, 0])
        np.testing.assert_array_equal(out.values[:, :, 2],
                                      compute_index(IndexKind.NDWI, r).values[:, :, 0])

    def test_ndvi_only_on_zero_raster(self):
        r = Raster(np.zeros((8, 8, 4), dtype=np.float32))
        out = build_representation(r, InputRepresentation.NDVI_ONLY)
        assert out.channels == 1
        assert np.all(out.values == 0.0)

    def test_rgb_plus_ndvi_last_channel(self, rng):
        r = make_rgbn(rng)
        out = build_representation(r, InputRepresentation.RGB_PLUS_NDVI)
        np.testing.assert_array_equal(out.values[:, :, 3],
                                      compute_index(IndexKind.NDVI, r).values[:, :, 0])
