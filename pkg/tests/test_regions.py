import numpy as np
import pytest
from oracles import bbox_sum_oracle, flood_fill_partition, region_set_partition as partition_of

from regionvlad import (
    ConfigError,
    FeatureTensor,
    InputError,
    RegionConfig,
    aggregate_regions,
    extract_regions,
)
from regionvlad.regions import dump_regions_json


def _tensor(data, image_id="t"):
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None]
    return FeatureTensor(image_id=image_id, data=arr)


class TestExtractExamples:
    def test_two_block_channel(self):
        data = [[0, 0, 5, 5], [0, 0, 5, 5], [2, 2, 0, 0], [2, 2, 0, 0]]
        t = _tensor(data)
        cfg = RegionConfig(top_n=1, similarity_tau=0.05)
        rs = extract_regions(t, cfg)
        assert len(rs.regions) == 2
        energies = sorted(r.mean_energy for r in rs.regions)
        assert energies == [2.0, 5.0]
        assert len(rs.selected) == 1
        assert rs.regions[rs.selected[0]].mean_energy == 5.0

    def test_all_zero_channel_yields_nothing(self):
        rs = extract_regions(_tensor(np.zeros((1, 4, 4))), RegionConfig())
        assert rs.regions == [] and rs.selected == []

    def test_distant_values_split_into_singletons(self):
        # |1 - 10| = 9 > 0.05 * 9 = 0.45, so two singleton regions.
        rs = extract_regions(_tensor([[1, 10]]), RegionConfig(top_n=2, similarity_tau=0.05))
        assert len(rs.regions) == 2
        assert sorted(r.mean_energy for r in rs.regions) == [1.0, 10.0]
        picked = [rs.regions[i].mean_energy for i in rs.selected]
        assert picked == [10.0, 1.0]

    def test_constant_channel_forms_one_region(self):
        # Zero value range: every above-floor cell joins a single region,
        # even across a gap.
        rs = extract_regions(_tensor([[3, 0, 3]]), RegionConfig())
        assert len(rs.regions) == 1
        assert rs.regions[0].pixels == frozenset({(0, 0), (0, 2)})
        assert rs.regions[0].bbox == (0, 0, 0, 2)
        assert rs.regions[0].mean_energy == 3.0

    def test_four_vs_eight_connectivity(self):
        # Diagonal-only contact: joined under 8-connectivity, split under 4.
        # Values differ so the channel stays out of the zero-range rule.
        data = [[2.0, 0], [0, 2.1]]
        rs8 = extract_regions(_tensor(data), RegionConfig(neighbourhood=8, similarity_tau=1.0))
        rs4 = extract_regions(_tensor(data), RegionConfig(neighbourhood=4, similarity_tau=1.0))
        assert len(rs8.regions) == 1
        assert len(rs4.regions) == 2

    def test_floor_excludes_cells(self):
        rs = extract_regions(
            _tensor([[0.5, 2.0], [0.5, 2.0]]), RegionConfig(activation_floor=1.0)
        )
        all_pixels = set().union(*(r.pixels for r in rs.regions))
        assert all_pixels == {(0, 1), (1, 1)}

    def test_tie_break_prefers_larger_then_lower_channel(self):
        # Two channels with equal-energy regions of different sizes.
        chan0 = np.zeros((3, 3), dtype=np.float32)
        chan0[0, 0] = 4.0  # singleton, energy 4
        chan1 = np.zeros((3, 3), dtype=np.float32)
        chan1[2, :2] = 4.0  # two cells, energy 4
        t = FeatureTensor(image_id="tie", data=np.stack([chan0, chan1]))
        rs = extract_regions(t, RegionConfig(top_n=2))
        first, second = (rs.regions[i] for i in rs.selected)
        assert first.pixel_count == 2 and first.channel == 1
        assert second.pixel_count == 1 and second.channel == 0

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            RegionConfig(top_n=0)
        with pytest.raises(ConfigError):
            RegionConfig(similarity_tau=0.0)
        with pytest.raises(ConfigError):
            RegionConfig(similarity_tau=1.5)
        with pytest.raises(ConfigError):
            RegionConfig(neighbourhood=6)


class TestExtractProperties:
    def test_partition_matches_flood_fill_oracle(self):
        rng = np.random.default_rng(42)
        for trial in range(300):
            k = int(rng.integers(1, 5))
            y = int(rng.integers(1, 9))
            x = int(rng.integers(1, 9))
            data = rng.integers(0, 4, size=(k, y, x)).astype(np.float32)
            nb = 4 if trial % 2 else 8
            cfg = RegionConfig(neighbourhood=nb)
            t = FeatureTensor(image_id=f"r{trial}", data=data)
            assert partition_of(extract_regions(t, cfg)) == flood_fill_partition(data, cfg)

    def test_partition_matches_oracle_continuous_values(self):
        rng = np.random.default_rng(3)
        for trial in range(100):
            data = rng.uniform(0, 1, size=(2, 6, 6)).astype(np.float32)
            data[rng.uniform(size=data.shape) < 0.3] = 0.0
            for tau in (0.05, 0.3, 1.0):
                cfg = RegionConfig(similarity_tau=tau)
                t = FeatureTensor(image_id=f"c{trial}", data=data)
                assert partition_of(extract_regions(t, cfg)) == flood_fill_partition(data, cfg)

    def test_mean_energy_matches_pixel_average(self):
        rng = np.random.default_rng(11)
        data = rng.uniform(0, 5, size=(3, 8, 8)).astype(np.float32)
        t = FeatureTensor(image_id="e", data=data)
        rs = extract_regions(t, RegionConfig())
        for r in rs.regions:
            expected = float(np.mean([float(data[r.channel, i, j]) for i, j in sorted(r.pixels)]))
            assert r.mean_energy == pytest.approx(expected, rel=1e-12)

    def test_bbox_is_tight_hull(self):
        rng = np.random.default_rng(12)
        data = rng.integers(0, 3, size=(2, 7, 7)).astype(np.float32)
        t = FeatureTensor(image_id="b", data=data)
        rs = extract_regions(t, RegionConfig())
        for r in rs.regions:
            rows = [i for i, _ in r.pixels]
            cols = [j for _, j in r.pixels]
            assert r.bbox == (min(rows), max(rows), min(cols), max(cols))

    def test_channel_permutation_stability(self):
        rng = np.random.default_rng(13)
        data = rng.integers(0, 4, size=(4, 6, 6)).astype(np.float32)
        perm = rng.permutation(4)
        t = FeatureTensor(image_id="p", data=data)
        tp = FeatureTensor(image_id="p", data=data[perm])
        rs, rsp = extract_regions(t, RegionConfig()), extract_regions(tp, RegionConfig())
        stats = sorted((r.mean_energy, r.pixel_count) for r in rs.regions)
        statsp = sorted((r.mean_energy, r.pixel_count) for r in rsp.regions)
        assert stats == statsp

    def test_selection_picks_top_energies(self):
        rng = np.random.default_rng(14)
        data = rng.uniform(0, 1, size=(3, 8, 8)).astype(np.float32)
        t = FeatureTensor(image_id="s", data=data)
        for n in (1, 3, 10, 10_000):
            rs = extract_regions(t, RegionConfig(top_n=n))
            h = len(rs.regions)
            assert len(rs.selected) == min(n, h)
            picked = [rs.regions[i].mean_energy for i in rs.selected]
            assert picked == sorted(picked, reverse=True)
            top = sorted((r.mean_energy for r in rs.regions), reverse=True)[: min(n, h)]
            assert sorted(picked, reverse=True) == top

    def test_scale_equivariance(self):
        # Power-of-two scaling keeps float arithmetic exact, so the
        # partition, the selection and the scaled energies match exactly.
        rng = np.random.default_rng(15)
        data = rng.uniform(0, 1, size=(2, 6, 6)).astype(np.float32)
        data[rng.uniform(size=data.shape) < 0.2] = 0.0
        cfg = RegionConfig(top_n=5)
        base = extract_regions(FeatureTensor(image_id="x", data=data), cfg)
        for c in (2.0, 4.0, 0.5):
            scaled = extract_regions(FeatureTensor(image_id="x", data=data * np.float32(c)), cfg)
            assert scaled.selected == base.selected
            for rb, rc in zip(base.regions, scaled.regions):
                assert rc.pixels == rb.pixels
                assert rc.mean_energy == pytest.approx(c * rb.mean_energy, rel=1e-12)


class TestAggregate:
    def test_two_pixel_example(self):
        # Local descriptors (1, 2) at (0,0) and (3, 4) at (0,1) sum to (4, 6).
        data = np.array([[[1, 3]], [[2, 4]]], dtype=np.float32)
        t = FeatureTensor(image_id="agg", data=data)
        rs = extract_regions(t, RegionConfig(top_n=1, similarity_tau=1.0))
        assert rs.regions[rs.selected[0]].bbox[2:] == (0, 1)
        f = aggregate_regions(t, rs)
        np.testing.assert_array_equal(f.matrix[0], [4.0, 6.0])

    def test_singleton_region_equals_local_descriptor(self):
        data = np.zeros((3, 4, 4), dtype=np.float32)
        data[:, 2, 1] = [7.0, 8.0, 9.0]
        t = FeatureTensor(image_id="single", data=data)
        rs = extract_regions(t, RegionConfig())
        f = aggregate_regions(t, rs)
        for row in f.matrix:
            np.testing.assert_array_equal(row, [7.0, 8.0, 9.0])

    def test_matches_nested_loop_oracle(self):
        rng = np.random.default_rng(21)
        for trial in range(100):
            data = rng.uniform(0, 2, size=(4, 6, 6)).astype(np.float32)
            data[rng.uniform(size=data.shape) < 0.25] = 0.0
            t = FeatureTensor(image_id=f"o{trial}", data=data)
            rs = extract_regions(t, RegionConfig(top_n=3))
            f = aggregate_regions(t, rs)
            for row, idx in zip(f.matrix, rs.selected):
                expected = bbox_sum_oracle(data, rs.regions[idx].bbox)
                np.testing.assert_allclose(row, expected, rtol=1e-9)

    def test_aggregation_spans_all_channels(self):
        # The region lives on channel 0 but the feature sums channel 1 too.
        data = np.zeros((2, 3, 3), dtype=np.float32)
        data[0, 0, 0] = 5.0
        data[1, 0, 0] = 11.0
        t = FeatureTensor(image_id="span", data=data)
        rs = extract_regions(t, RegionConfig())
        f = aggregate_regions(t, rs)
        np.testing.assert_array_equal(f.matrix[0], [5.0, 11.0])

    def test_mask_mode_sums_exact_pixels(self):
        # L-shaped region: bbox covers (1,1) but the mask does not.
        data = np.array([[[1.0, 1.0], [1.0, 0.0]]], dtype=np.float32)
        data2 = np.array([[[1.0, 1.0], [1.0, 9.0]]], dtype=np.float32)
        t = FeatureTensor(image_id="L", data=data2)
        cfg = RegionConfig(similarity_tau=0.05)
        rs = extract_regions(t, cfg)
        target = next(i for i, r in enumerate(rs.regions) if r.pixel_count == 3)
        rs_sel = type(rs)(image_id=rs.image_id, regions=rs.regions, selected=[target])
        bbox = aggregate_regions(t, rs_sel, mode="bbox")
        mask = aggregate_regions(t, rs_sel, mode="mask")
        assert bbox.matrix[0][0] == 12.0
        assert mask.matrix[0][0] == 3.0

    def test_linearity_for_fixed_region_set(self):
        # Integer-valued activations keep the float32 addition exact, so the
        # linearity identity holds to double-precision accumulation error.
        rng = np.random.default_rng(22)
        d1 = rng.integers(0, 100, size=(3, 5, 5)).astype(np.float32)
        d2 = rng.integers(0, 100, size=(3, 5, 5)).astype(np.float32)
        t1 = FeatureTensor(image_id="lin", data=d1)
        t2 = FeatureTensor(image_id="lin", data=d2)
        t12 = FeatureTensor(image_id="lin", data=d1 + d2)
        rs = extract_regions(t1, RegionConfig(top_n=5))
        lhs = aggregate_regions(t12, rs).matrix
        rhs = aggregate_regions(t1, rs).matrix + aggregate_regions(t2, rs).matrix
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)

    def test_mismatched_image_id(self):
        t = FeatureTensor(image_id="a", data=np.ones((1, 2, 2), dtype=np.float32))
        other = FeatureTensor(image_id="b", data=np.ones((1, 2, 2), dtype=np.float32))
        rs = extract_regions(t, RegionConfig())
        with pytest.raises(InputError):
            aggregate_regions(other, rs)

    def test_fewer_regions_than_n_keeps_all(self):
        t = FeatureTensor(image_id="few", data=np.ones((1, 2, 2), dtype=np.float32))
        rs = extract_regions(t, RegionConfig(top_n=400))
        f = aggregate_regions(t, rs)
        assert f.matrix.shape == (1, 1)


def test_debug_dump(tmp_path):
    import json

    t = FeatureTensor(image_id="dump", data=np.ones((1, 2, 2), dtype=np.float32))
    rs = extract_regions(t, RegionConfig())
    out = tmp_path / "regions.json"
    dump_regions_json(rs, out)
    doc = json.loads(out.read_text())
    assert doc["image_id"] == "dump"
    assert doc["regions"][0]["pixel_count"] == 4
