import json

import numpy as np
import pytest

from sinolocate.core import CapacityError, ScanGeometry, ValidationError, read_raster
from sinolocate.phantomgen import (DatasetSpec, default_eps, enumerate_samples,
                                   gen_dataset, gen_phantom, gt_masks,
                                   inject_defects, rotate_phantom)

from conftest import inject_manual


SMALL_SPEC = dict(seed=11, n_phantoms=1, image_size=128,
                  defects_per_phantom=(1, 1), radius_range=(8.0, 12.0))


class TestGenPhantom:
    def test_deterministic(self):
        g = ScanGeometry.square(128)
        a = gen_phantom(123, g)
        b = gen_phantom(123, g)
        np.testing.assert_array_equal(a, b)
        c = gen_phantom(124, g)
        assert not np.array_equal(a, c)

    def test_value_bound_over_seeds(self):
        # additive compositing of <= 8 primitives valued <= 1.0
        g = ScanGeometry.square(128)
        for seed in range(100):
            ph = gen_phantom(seed, g)
            assert ph.min() >= 0.0
            assert ph.max() <= 8.0
            assert ph.max() > 0.0

    def test_support_inside_inscribed_circle(self):
        g = ScanGeometry.square(128)
        ys, xs = np.mgrid[0:128, 0:128]
        outside = (xs - 63.5) ** 2 + (ys - 63.5) ** 2 > 64.0 ** 2
        for seed in range(20):
            ph = gen_phantom(seed, g)
            assert ph[outside].sum() == 0.0


class TestInjectDefects:
    def test_zero_defects_is_identity(self):
        g = ScanGeometry.square(128)
        ph = gen_phantom(5, g)
        spec = DatasetSpec(**SMALL_SPEC)
        out, recs = inject_defects(ph, 0, spec, 1)
        np.testing.assert_array_equal(out, ph)
        assert recs == []

    def test_difference_is_exactly_the_disc(self):
        # the label rule: (after - before) nonzero exactly on the disc
        g = ScanGeometry.square(256)
        ph = gen_phantom(5, g)
        spec = DatasetSpec(seed=0, n_phantoms=1, image_size=256,
                           radius_range=(10.0, 10.0))
        out, recs = inject_defects(ph, 1, spec, 7)
        assert len(recs) == 1
        rec = recs[0]
        assert rec.radius == pytest.approx(10.0)
        diff = out - ph
        ys, xs = np.mgrid[0:256, 0:256]
        disc = ((xs - rec.center[0]) ** 2 + (ys - rec.center[1]) ** 2
                <= rec.radius ** 2)
        assert (diff[disc] > 0).all()
        assert (diff[~disc] == 0).all()

    def test_pairwise_distance_over_seeds(self):
        g = ScanGeometry.square(256)
        ph = gen_phantom(1, g)
        spec = DatasetSpec(seed=0, n_phantoms=1, image_size=256,
                           radius_range=(8.0, 20.0))
        for seed in range(100):
            _out, recs = inject_defects(ph, 3, spec, seed)
            assert len(recs) == 3
            for i in range(3):
                for j in range(i + 1, 3):
                    a, b = recs[i], recs[j]
                    d = np.hypot(a.center[0] - b.center[0],
                                 a.center[1] - b.center[1])
                    assert d > a.radius + b.radius + 2.0

    def test_placement_margin(self):
        g = ScanGeometry.square(256)
        ph = gen_phantom(2, g)
        spec = DatasetSpec(seed=0, n_phantoms=1, image_size=256,
                           radius_range=(8.0, 20.0))
        for seed in range(30):
            _out, recs = inject_defects(ph, 2, spec, seed)
            for r in recs:
                d = np.hypot(r.center[0] - 127.5, r.center[1] - 127.5)
                assert d <= 128.0 - 30.0

    def test_intensity_rule(self):
        g = ScanGeometry.square(256)
        ph = gen_phantom(3, g)
        spec = DatasetSpec(seed=0, n_phantoms=1, image_size=256,
                           radius_range=(15.0, 15.0))
        out, recs = inject_defects(ph, 1, spec, 3)
        assert recs[0].intensity_mean == pytest.approx(1.5 * ph.max())
        assert recs[0].intensity_sigma == pytest.approx(0.15 * ph.max())
        diff = out - ph
        vals = diff[diff > 0]
        assert vals.mean() == pytest.approx(recs[0].intensity_mean, rel=0.05)

    def test_capacity_error(self):
        # 70px image leaves a 5px placement disc: two radius-8 defects
        # can never be 18px apart inside it
        ph = np.zeros((70, 70))
        spec = DatasetSpec(seed=0, n_phantoms=1, image_size=70,
                           radius_range=(8.0, 8.0))
        with pytest.raises(CapacityError):
            inject_defects(ph, 2, spec, 0)


class TestGtMasks:
    def test_identical_inputs_zero_mask(self):
        g = ScanGeometry.square(128)
        ph = gen_phantom(4, g)
        _sc, _sd, union, per = gt_masks(ph, ph, [], g, eps=1e-6)
        assert union.sum() == 0
        assert per == []

    def test_centered_disc_width(self):
        # disc radius 10 at the rotation center projects ~20 bins wide at
        # every angle, centered at s0
        g = ScanGeometry.square(256)
        clean = gen_phantom(6, g)
        defected, recs = inject_manual(clean, [(127.5, 127.5, 10.0)])
        _sc, _sd, union, per = gt_masks(clean, defected, recs, g)
        assert len(per) == 1
        for row in union:
            nz = np.nonzero(row)[0]
            assert len(nz) > 0
            assert nz[-1] - nz[0] + 1 == len(nz)  # single run
            width = len(nz)
            assert 18 <= width <= 23
            center = (nz[0] + nz[-1]) / 2
            assert abs(center - 127.5) <= 1.5

    def test_union_equals_or_on_disjoint_rows(self):
        g = ScanGeometry.square(256)
        clean = gen_phantom(8, g)
        defected, recs = inject_manual(
            clean, [(80.0, 127.5, 9.0), (180.0, 127.5, 9.0)])
        _sc, _sd, union, per = gt_masks(clean, defected, recs, g)
        assert len(per) == 2
        orred = (per[0] | per[1]).astype(np.uint8)
        # union can only add pixels where the defect projections overlap
        assert ((union == 1) | (orred == 0)).all() or (union >= orred).all()
        overlap_rows = ((per[0] & per[1]).sum(axis=1) > 0)
        np.testing.assert_array_equal(union[~overlap_rows], orred[~overlap_rows])

    def test_eps_default_rule(self):
        sino = np.array([[0.0, 4.0], [1.0, 2.0]])
        assert default_eps(sino) == pytest.approx(4e-3)


class TestDatasetSpec:
    def test_validation_bad_radius(self):
        with pytest.raises(ValidationError, match="radius_range"):
            DatasetSpec(seed=0, n_phantoms=1, image_size=128,
                        radius_range=(-4.0, 10.0))

    def test_validation_bad_defect_count(self):
        with pytest.raises(ValidationError, match="defects_per_phantom"):
            DatasetSpec(seed=0, n_phantoms=1, defects_per_phantom=(2, 1))

    def test_json_round_trip(self, tmp_path):
        spec = DatasetSpec(**SMALL_SPEC)
        p = tmp_path / "spec.json"
        p.write_text(json.dumps(spec.to_dict()))
        assert DatasetSpec.from_json(p) == spec


class TestEnumerate:
    def test_small_counts(self):
        spec = DatasetSpec(seed=0, n_phantoms=2, image_size=128,
                           rotations_deg=(0.0,), radius_range=(8.0, 12.0),
                           splits={"train": 1.0})
        plans = enumerate_samples(spec)
        assert len(plans) == 2

    def test_full_scale_training_count(self):
        # 500 training phantoms x 81 rotations (0..80 deg, 1 deg steps)
        spec = DatasetSpec(seed=0, n_phantoms=500, image_size=512,
                           rotations_deg=tuple(float(d) for d in range(81)),
                           splits={"train": 1.0})
        plans = enumerate_samples(spec)
        assert len(plans) == 40_500
        assert all(p.split == "train" for p in plans)

    def test_val_test_not_augmented(self):
        spec = DatasetSpec(seed=0, n_phantoms=10, image_size=128,
                           rotations_deg=(0.0, 10.0, 20.0),
                           radius_range=(8.0, 12.0),
                           splits={"train": 0.5, "val": 0.2, "test": 0.3})
        plans = enumerate_samples(spec)
        train = [p for p in plans if p.split == "train"]
        other = [p for p in plans if p.split != "train"]
        assert len(train) == 5 * 3
        assert len(other) == 5
        assert all(p.rot_deg == 0.0 for p in other)


class TestGenDataset:
    def test_generate_and_reproduce(self, tmp_path):
        spec = DatasetSpec(seed=21, n_phantoms=2, image_size=128,
                           n_angles=128, defects_per_phantom=(1, 1),
                           radius_range=(8.0, 12.0), splits={"train": 1.0})
        d1 = tmp_path / "run1"
        d2 = tmp_path / "run2"
        m1 = gen_dataset(spec, d1)
        m2 = gen_dataset(spec, d2)
        assert len(m1["samples"]) == 2
        assert m1["samples"] == m2["samples"]
        for s in m1["samples"]:
            for key in ("clean_sino", "sino", "mask"):
                b1 = (d1 / s["paths"][key]).read_bytes()
                b2 = (d2 / s["paths"][key]).read_bytes()
                assert b1 == b2
            mask = read_raster(d1 / s["paths"]["mask"])
            assert mask.dtype == np.uint8
            assert set(np.unique(mask)) <= {0, 1}
            assert len(s["paths"]["instance_masks"]) == s["n_defects"] == 1

    def test_manifest_schema(self, tmp_path):
        spec = DatasetSpec(seed=3, n_phantoms=1, image_size=128, n_angles=64,
                           defects_per_phantom=(1, 1), radius_range=(8.0, 10.0),
                           splits={"train": 1.0})
        manifest = gen_dataset(spec, tmp_path / "ds")
        loaded = json.loads((tmp_path / "ds" / "manifest.json").read_text())
        assert loaded == manifest
        s = manifest["samples"][0]
        assert {"id", "seed", "split", "paths", "n_defects"} <= set(s)
        assert {"clean_sino", "sino", "mask", "instance_masks",
                "records"} <= set(s["paths"])


class TestRotate:
    def test_identity_and_bounds(self):
        g = ScanGeometry.square(128)
        ph = gen_phantom(9, g)
        np.testing.assert_array_equal(rotate_phantom(ph, 0.0), ph)
        rot = rotate_phantom(ph, 37.0)
        assert rot.shape == ph.shape
        assert rot.min() >= 0.0
        # mass approximately preserved by bilinear resampling
        assert rot.sum() == pytest.approx(ph.sum(), rel=0.02)
