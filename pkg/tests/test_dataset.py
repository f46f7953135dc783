from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mddiff.dataset import (
    RANDOM_PAIR_MAE_FLOOR,
    SPLIT_MASKS,
    FactorVector,
    decode_vector,
    domain_factors,
    estimate_random_pair_mae,
    generate_dataset,
    load_dataset,
    make_view,
    render,
    sample_factors,
    save_dataset,
    vector_mode,
)

TWO_PI = 2 * np.pi


def factors(**kw):
    base = dict(px=0.1, py=-0.2, angle=1.0, obj_hue=0.15,
                floor_hue=0.5, wall1_hue=0.3, wall2_hue=0.7)
    base.update(kw)
    return FactorVector(**base)


class TestFactorVector:
    def test_range_validation(self):
        with pytest.raises(ValueError):
            factors(px=0.6)
        with pytest.raises(ValueError):
            factors(angle=TWO_PI)
        with pytest.raises(ValueError):
            factors(obj_hue=1.0)
        with pytest.raises(ValueError):
            factors(wall2_hue=-0.1)

    def test_sample_factors_in_range(self, rng):
        for _ in range(200):
            sample_factors(rng)  # constructor validates


class TestInversionTable:
    def test_domain_a_identity(self):
        u = factors()
        assert domain_factors(0, u) is u

    def test_domain_b(self):
        f = domain_factors(1, factors(px=0.2, angle=1.0, obj_hue=0.9))
        assert f.px == pytest.approx(-0.2)
        assert f.angle == pytest.approx(TWO_PI - 1.0)
        assert f.obj_hue == pytest.approx((0.9 + 1 / 3) % 1.0)
        assert f.py == pytest.approx(-0.2)  # untouched

    def test_domain_c(self):
        f = domain_factors(2, factors(py=-0.3, angle=0.5, obj_hue=0.5))
        assert f.py == pytest.approx(0.3)
        assert f.angle == pytest.approx(0.5 + np.pi)
        assert f.obj_hue == pytest.approx((0.5 + 2 / 3) % 1.0)
        assert f.px == pytest.approx(0.1)  # untouched

    def test_background_hues_shared(self):
        u = factors()
        for d in (1, 2):
            f = domain_factors(d, u)
            assert (f.floor_hue, f.wall1_hue, f.wall2_hue) == \
                (u.floor_hue, u.wall1_hue, u.wall2_hue)

    def test_bad_domain(self):
        with pytest.raises(ValueError):
            domain_factors(3, factors())


class TestRender:
    def test_shape_range_dtype(self):
        img = render(0, factors())
        assert img.shape == (3, 32, 32)
        assert img.dtype == np.float32
        assert img.min() >= -1.0 and img.max() <= 1.0

    def test_deterministic(self):
        a = render(1, factors())
        b = render(1, factors())
        assert np.array_equal(a, b)

    def test_rejects_tiny_size(self):
        with pytest.raises(ValueError):
            render(0, factors(), size=8)

    def test_background_layout(self):
        # no object in the way when the object sits top-left
        img = render(0, factors(px=-0.4, py=0.4), size=64)
        rgb = (img + 1.0) / 2.0
        # floor spans the bottom third at any x
        assert np.allclose(rgb[:, 60, 5], rgb[:, 60, 60])
        # the two walls differ across the vertical midline
        assert not np.allclose(rgb[:, 35, 20], rgb[:, 35, 44])

    def test_object_moves_with_position(self):
        a = render(0, factors(px=-0.3, py=0.0))
        b = render(0, factors(px=0.3, py=0.0))
        assert not np.array_equal(a, b)
        diff = np.abs(a - b).sum(axis=0)
        ys, xs = np.nonzero(diff)
        assert xs.min() < 16 <= xs.max()  # touched pixels on both halves

    def test_shapes_differ_between_domains(self):
        u = factors(px=0.0, py=0.0, angle=0.0, obj_hue=0.0)
        views = [render(d, u) for d in range(3)]
        assert not np.array_equal(views[0], views[1])
        assert not np.array_equal(views[1], views[2])

    def test_object_area_roughly_matches_shape(self):
        # square of half-side 0.82r vs disc of radius r: known area ratio
        u = factors(px=0.0, py=0.0, angle=0.3)

        def area(d):
            img = render(d, u, size=128)
            bg = render(d, factors(px=0.45, py=0.45, angle=0.3), size=128)
            return int((np.abs(img - bg).sum(axis=0) > 0.05).sum())
        sq, tri, disc = area(0), area(1), area(2)
        assert sq < disc  # (2*0.82r)^2 = 2.69 r^2 < pi r^2 minus a small notch
        assert tri < sq  # equilateral in circle r: 1.30 r^2


class TestVectorMode:
    def test_dimension_and_range(self):
        v = vector_mode(0, factors())
        assert v.shape == (8,)
        assert v.dtype == np.float32
        assert np.all(np.abs(v) <= 1.0)

    def test_round_trip(self, rng):
        for _ in range(50):
            u = sample_factors(rng)
            f = domain_factors(1, u)
            g = decode_vector(vector_mode(1, u))
            assert np.allclose(f.as_tuple(), g.as_tuple(), atol=1e-6)

    def test_angle_encoding_on_unit_circle(self, rng):
        for _ in range(20):
            v = vector_mode(2, sample_factors(rng))
            assert v[2] ** 2 + v[3] ** 2 == pytest.approx(1.0, abs=1e-5)


class TestSplits:
    def test_equal_policy_counts(self):
        ds = generate_dataset(100, mode="vector", sup_fraction=0.4, seed=0)
        counts = Counter(p.split_tag for p in ds.points)
        assert counts == {"FULL": 40, "PAIR_AB": 20, "PAIR_BC": 20, "PAIR_AC": 20}

    def test_bridge_policy_counts(self):
        ds = generate_dataset(100, mode="vector", sup_fraction=0.4,
                              pair_policy="bridge", seed=0)
        counts = Counter(p.split_tag for p in ds.points)
        assert counts == {"FULL": 40, "PAIR_AB": 30, "PAIR_BC": 30}

    def test_fully_supervised(self):
        ds = generate_dataset(10, mode="vector", sup_fraction=1.0, seed=0)
        assert all(p.split_tag == "FULL" for p in ds.points)

    def test_masks_match_tags(self):
        ds = generate_dataset(60, mode="vector", sup_fraction=0.5, seed=1)
        for p in ds.points:
            assert tuple(p.sup_mask) == SPLIT_MASKS[p.split_tag]
            for d in range(3):
                assert (p.views[d] is None) == (not p.sup_mask[d])

    def test_unsplittable_remainder_rejected(self):
        with pytest.raises(ValueError):
            generate_dataset(10, mode="vector", sup_fraction=0.8, seed=0)  # rest=2

    def test_bad_args(self):
        with pytest.raises(ValueError):
            generate_dataset(0, mode="vector")
        with pytest.raises(ValueError):
            generate_dataset(10, mode="tensor")
        with pytest.raises(ValueError):
            generate_dataset(10, sup_fraction=1.2)
        with pytest.raises(ValueError):
            generate_dataset(10, pair_policy="ring")

    def test_tags_shuffled(self):
        ds = generate_dataset(200, mode="vector", sup_fraction=0.4, seed=2)
        tags = [p.split_tag for p in ds.points]
        assert tags[:80] != ["FULL"] * 80  # not left in construction order


class TestGeneration:
    def test_bit_reproducible(self):
        a = generate_dataset(30, mode="vector", sup_fraction=0.5, seed=7)
        b = generate_dataset(30, mode="vector", sup_fraction=0.5, seed=7)
        for pa, pb in zip(a.points, b.points):
            assert pa.factors == pb.factors
            assert pa.split_tag == pb.split_tag
            for va, vb in zip(pa.views, pb.views):
                assert (va is None and vb is None) or np.array_equal(va, vb)

    def test_seed_changes_content(self):
        a = generate_dataset(10, mode="vector", sup_fraction=1.0, seed=0)
        b = generate_dataset(10, mode="vector", sup_fraction=1.0, seed=1)
        assert a.points[0].factors != b.points[0].factors

    def test_views_equal_ground_truth_oracle(self):
        ds = generate_dataset(12, size=32, sup_fraction=0.5, seed=3, mode="image")
        for i, p in enumerate(ds.points):
            for d in range(3):
                gt = ds.ground_truth_view(i, d)
                if p.sup_mask[d]:
                    assert np.array_equal(p.views[d], gt)
                else:
                    assert gt.shape == (3, 32, 32)

    def test_view_shape_property(self):
        assert generate_dataset(3, mode="vector", sup_fraction=1.0).view_shape == (8,)
        assert generate_dataset(3, size=16, sup_fraction=1.0).view_shape == (3, 16, 16)


class TestFileFormat:
    @pytest.mark.parametrize("mode", ["vector", "image"])
    def test_round_trip_byte_identical(self, tmp_path, mode):
        ds = generate_dataset(20, size=16, mode=mode, sup_fraction=0.4, seed=5)
        a, b = tmp_path / "a.mdds", tmp_path / "b.mdds"
        save_dataset(a, ds)
        loaded = load_dataset(a)
        save_dataset(b, loaded)
        assert a.read_bytes() == b.read_bytes()
        assert len(loaded) == 20
        for pa, pb in zip(ds.points, loaded.points):
            assert pa.split_tag == pb.split_tag
            assert np.allclose(pa.factors.as_tuple(), pb.factors.as_tuple())
            for va, vb in zip(pa.views, pb.views):
                assert (va is None and vb is None) or np.array_equal(va, vb)

    def test_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "bad.mdds"
        path.write_bytes(b"JUNKxxxx")
        with pytest.raises(ValueError, match="magic"):
            load_dataset(path)


class TestRandomPairFloor:
    def test_frozen_constants_match_estimator(self):
        # quick re-estimates must land near the frozen 1000-pair values
        for mode, n in (("vector", 300), ("image", 120)):
            est = estimate_random_pair_mae(mode, n_pairs=n)
            assert est == pytest.approx(RANDOM_PAIR_MAE_FLOOR[mode], rel=0.12)

    def test_floor_well_above_zero(self):
        assert RANDOM_PAIR_MAE_FLOOR["vector"] > 0.1
        assert RANDOM_PAIR_MAE_FLOOR["image"] > 0.1
