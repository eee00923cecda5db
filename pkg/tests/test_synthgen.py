import numpy as np
import pytest

from ndsseg.data import load_manifest
from ndsseg.errors import ValidationError
from ndsseg.raster import IndexKind, compute_index
from ndsseg.synth import SynthConfig, generate_benchmark, generate_field_sequence


CFG = SynthConfig(side=48, num_flights=6, seed=11)


class TestConfig:
    def test_rejects_short_sequences(self):
        with pytest.raises(ValidationError):
            SynthConfig(num_flights=4)

    def test_rejects_shrinking_growth(self):
        with pytest.raises(ValidationError):
            SynthConfig(growth_rate=1.0)

    def test_rejects_heavy_prevalence(self):
        with pytest.raises(ValidationError):
            SynthConfig(target_prevalence=0.7)


class TestFieldSequence:
    def test_deterministic(self):
        a = generate_field_sequence(CFG, 3)
        b = generate_field_sequence(CFG, 3)
        for (_, ra), (_, rb) in zip(a.flights, b.flights):
            np.testing.assert_array_equal(ra.values, rb.values)
        np.testing.assert_array_equal(a.target_mask.values, b.target_mask.values)

    def test_ordinal_changes_output(self):
        a = generate_field_sequence(CFG, 0)
        b = generate_field_sequence(CFG, 1)
        assert not np.array_equal(a.flights[0][1].values, b.flights[0][1].values)

    def test_no_blobs_empty_mask(self):
        cfg = SynthConfig(side=48, blob_count_range=(0, 0), seed=0)
        seq = generate_field_sequence(cfg, 0)
        assert seq.target_mask.values.sum() == 0

    def test_masks_nested_and_growing(self):
        for ordinal in range(5):
            seq = generate_field_sequence(CFG, ordinal)
            prev = None
            for k in range(CFG.num_flights):
                m = seq.flight_masks[k].values
                if prev is not None:
                    # mask(k-1) subset of mask(k)
                    assert np.all(prev <= m)
                    assert m.sum() >= prev.sum()
                prev = m

    def test_prevalence_near_target(self):
        fracs = [
            generate_field_sequence(CFG, i).target_mask.values.mean() for i in range(20)
        ]
        assert abs(np.mean(fracs) - CFG.target_prevalence) < 0.10

    def test_stressed_ndvi_below_unstressed_median(self):
        seq = generate_field_sequence(CFG, 2)
        final = seq.flight(CFG.num_flights - 1)
        ndvi = compute_index(IndexKind.NDVI, final).values[:, :, 0]
        mask = seq.target_mask.values[:, :, 0] > 0.5
        assert mask.any()
        assert np.median(ndvi[mask]) < np.median(ndvi[~mask])

    def test_seamline_fixed_across_flights(self):
        cfg = SynthConfig(side=48, blob_count_range=(0, 0), noise_sigma=0.0,
                          nuisance_amp=0.0, seamline=True, seamline_delta=0.08, seed=5)
        seq = generate_field_sequence(cfg, 0)
        cols = []
        for _, raster in seq.flights:
            red = raster.values[:, :, 0].mean(axis=0)
            cols.append(int(np.argmax(np.diff(red))))
        assert len(set(cols)) == 1


class TestBenchmark:
    def test_roundtrip(self, tmp_path):
        manifest = generate_benchmark(CFG, 8, tmp_path)
        dataset = load_manifest(manifest)
        assert len(dataset) == 8
        regenerated = generate_field_sequence(CFG, 0)
        loaded = next(s for s in dataset if s.field_id == "synth_0000")
        np.testing.assert_allclose(
            loaded.flights[0][1].values, regenerated.flights[0][1].values, atol=1e-6
        )
        np.testing.assert_array_equal(
            loaded.target_mask.values, regenerated.target_mask.values
        )

    def test_determinism_across_runs(self, tmp_path):
        m1 = generate_benchmark(CFG, 3, tmp_path / "a")
        m2 = generate_benchmark(CFG, 3, tmp_path / "b")
        assert m1.read_text() == m2.read_text()
        for f in sorted(p.name for p in (tmp_path / "a").iterdir()):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_nds_presence_rate(self, tmp_path):
        manifest = generate_benchmark(CFG, 20, tmp_path)
        dataset = load_manifest(manifest)
        with_nds = sum(s.target_mask.values.sum() > 0 for s in dataset)
        assert with_nds >= 18  # >= 90%

    def test_mean_prevalence_tolerance(self, tmp_path):
        cfg = SynthConfig(side=48, target_prevalence=0.21, seed=3)
        manifest = generate_benchmark(cfg, 30, tmp_path)
        dataset = load_manifest(manifest)
        fracs = [s.target_mask.values.mean() for s in dataset
                 if s.target_mask.values.sum() > 0]
        assert 0.11 <= np.mean(fracs) <= 0.31
