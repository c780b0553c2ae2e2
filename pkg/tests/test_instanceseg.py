import numpy as np
import pytest

from sinolocate.core import (Run, ScanGeometry, SinusoidParams, Skeleton,
                             ValidationError)
from sinolocate.instanceseg import (close_row_gaps, dilate_to_masks,
                                    hough_sinusoid, provisional_labels,
                                    reclassify, remove_intersections,
                                    separate_instances, skeletonize)
from sinolocate.phantomgen import gen_phantom, gt_masks
from sinolocate.projector import point_trace

from conftest import inject_manual, rasterize_traces


def random_mask(rng, rows=40, cols=64, max_runs=5):
    """Random binary mask with up to max_runs disjoint runs per row."""
    m = np.zeros((rows, cols), dtype=np.uint8)
    for r in range(rows):
        k = rng.integers(0, max_runs + 1)
        cuts = np.sort(rng.choice(cols, size=2 * k, replace=False))
        for i in range(k):
            m[r, cuts[2 * i]:cuts[2 * i + 1] + 1] = 1
    return m


def brute_force_merged_rows(traces, radius, g):
    """Rows where rasterized trace intervals touch or overlap (independent
    of the skeleton code: pure interval arithmetic)."""
    merged = set()
    for i in range(g.n_angles):
        iv = []
        for tr in traces:
            left = int(np.floor(tr[i] - radius + 0.5))
            right = int(np.floor(tr[i] + radius + 0.5))
            iv.append((left, right))
        iv.sort()
        for (l1, r1), (l2, r2) in zip(iv, iv[1:]):
            if l2 <= r1 + 1:
                merged.add(i)
    return merged


class TestSkeletonize:
    def test_empty_mask(self):
        sk = skeletonize(np.zeros((8, 16), dtype=np.uint8))
        assert sk.runs == ()

    def test_single_run_definition(self):
        m = np.zeros((4, 32), dtype=np.uint8)
        m[2, 10:21] = 1
        sk = skeletonize(m)
        assert sk.runs == (Run(row=2, left=10, right=20),)
        assert sk.runs[0].center == 15.0
        assert sk.runs[0].radius == 5.0

    def test_rejects_non_binary(self):
        with pytest.raises(ValidationError):
            skeletonize(np.full((4, 4), 3))

    def test_runs_sorted_and_disjoint(self):
        rng = np.random.default_rng(0)
        m = random_mask(rng)
        sk = skeletonize(m)
        by_row = {}
        for r in sk.runs:
            by_row.setdefault(r.row, []).append(r)
        for runs in by_row.values():
            for a, b in zip(runs, runs[1:]):
                assert a.left <= b.left
                assert a.right < b.left - 1 or a.right < b.left

    def test_round_trip_exact_100_masks(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            m = random_mask(rng)
            masks = dilate_to_masks(skeletonize(m))
            assert len(masks) <= 1
            back = masks[0] if masks else np.zeros_like(m)
            np.testing.assert_array_equal(back, m)

    def test_disc_defect_skeleton(self):
        # centered disc radius 10: one run per row, centers at s0, radii ~10
        g = ScanGeometry.square(256)
        clean = gen_phantom(6, g)
        defected, recs = inject_manual(clean, [(127.5, 127.5, 10.0)])
        _sc, _sd, union, _per = gt_masks(clean, defected, recs, g)
        sk = skeletonize(union)
        rows = [r.row for r in sk.runs]
        assert sorted(rows) == list(range(256))  # exactly one run per row
        centers = np.array([r.center for r in sk.runs])
        radii = np.array([r.radius for r in sk.runs])
        assert np.abs(centers - 127.5).max() <= 1.0
        assert np.abs(radii - 10.0).max() <= 1.0


class TestCloseRowGaps:
    def test_fills_small_gaps_only(self):
        m = np.zeros((2, 32), dtype=np.uint8)
        m[0, 2:6] = 1
        m[0, 8:12] = 1   # gap of 2
        m[1, 2:6] = 1
        m[1, 11:15] = 1  # gap of 5
        out = close_row_gaps(m, max_gap=3)
        assert (out[0, 2:12] == 1).all()
        assert out[1, 6:11].sum() == 0

    def test_identity_when_disabled(self):
        rng = np.random.default_rng(1)
        m = random_mask(rng)
        np.testing.assert_array_equal(close_row_gaps(m, 0), m)


class TestRemoveIntersections:
    def test_single_trace_unchanged(self, g512):
        tr = point_trace(310.0, 210.0, g512)
        mask = rasterize_traces([tr], 5.0, g512)
        sk = skeletonize(mask)
        out = remove_intersections(sk)
        assert out.runs == sk.runs
        assert out.removed_rows == frozenset()

    def test_two_crossing_traces(self, g512):
        traces = [point_trace(300.0, 200.0, g512),
                  point_trace(200.0, 300.0, g512)]
        mask = rasterize_traces(traces, 5.0, g512)
        merged = brute_force_merged_rows(traces, 5.0, g512)
        assert merged  # the construction does cross
        sk = skeletonize(mask)
        out = remove_intersections(sk)
        kept_rows = {r.row for r in out.runs}
        # exactly the merged rows lost their runs
        assert kept_rows == set(range(512)) - merged
        assert merged <= out.removed_rows

    def test_three_traces_path_count(self, g512):
        # rows below the 90th-percentile count (the merge zones) go away
        # wholesale; the sinusoid relabel then regroups the surviving run
        # segments into exactly one path per trace (adjacent-row linking
        # alone cannot bridge a multi-row merge zone: the traces drift tens
        # of bins across it)
        centers = [(300.0, 200.0), (200.0, 300.0), (255.5, 140.0)]
        traces = [point_trace(cx, cy, g512) for cx, cy in centers]
        mask = rasterize_traces(traces, 5.0, g512)
        sk = skeletonize(mask)
        out = remove_intersections(sk)
        counts = np.bincount([r.row for r in out.runs], minlength=512)
        assert set(np.unique(counts)) <= {0, 3}
        labeled = reclassify(out, g512)
        assert len(labeled.sinusoids) == 3
        assert set(labeled.labels) == {1, 2, 3}
        for cx, cy in centers:
            err = min(np.hypot(s.cx - cx, s.cy - cy) for s in labeled.sinusoids)
            assert err <= 1.0


class TestProvisionalLabels:
    def test_one_block_one_label(self, g512):
        tr = point_trace(300.0, 240.0, g512)
        sk = skeletonize(rasterize_traces([tr], 4.0, g512))
        labels = provisional_labels(sk)
        assert set(labels) == {1}

    def test_two_blocks_fresh_labels(self, g512):
        tr = point_trace(300.0, 240.0, g512)
        mask = rasterize_traces([tr], 4.0, g512)
        mask[250:260] = 0  # split the trace into two row blocks
        sk = skeletonize(mask)
        labels = provisional_labels(sk)
        lab_by_row = {sk.runs[i].row: lb for i, lb in enumerate(labels)}
        assert lab_by_row[0] == 1
        assert lab_by_row[260] == 2
        assert set(labels) == {1, 2}

    def test_two_runs_per_row_ordinal(self, g512):
        traces = [point_trace(220.0, 255.5, g512),
                  point_trace(320.0, 255.5, g512)]
        mask = rasterize_traces(traces, 3.0, g512)
        sk = skeletonize(mask)
        labels = provisional_labels(sk)
        # all rows have two runs; left run gets 1, right run gets 2
        for i, r in enumerate(sk.runs):
            pass
        by_row = {}
        for i, r in enumerate(sk.runs):
            by_row.setdefault(r.row, []).append((r.left, labels[i]))
        merged_rows = brute_force_merged_rows(traces, 3.0, g512)
        for row, entries in by_row.items():
            if row in merged_rows or len(entries) != 2:
                continue
            entries.sort()
            assert [lb for _pos, lb in entries] == [1, 2]


class TestHough:
    def test_flat_trace_recovers_rotation_center(self, g512):
        pts = np.stack([np.arange(512), np.full(512, 255.5)], axis=1)
        peaks = hough_sinusoid(pts, g512)
        assert len(peaks) == 1
        assert abs(peaks[0].cx - 255.5) <= 1.0
        assert abs(peaks[0].cy - 255.5) <= 1.0

    def test_single_center_within_one_px(self, g512):
        tr = point_trace(300.0, 200.0, g512)
        pts = np.stack([np.arange(512), tr], axis=1)
        peaks = hough_sinusoid(pts, g512)
        assert len(peaks) == 1
        err = np.hypot(peaks[0].cx - 300.0, peaks[0].cy - 200.0)
        assert err <= 1.0

    def test_two_centers_two_peaks(self, g512):
        pts = []
        for cx, cy in ((300.0, 200.0), (150.0, 350.0)):
            tr = point_trace(cx, cy, g512)
            pts.append(np.stack([np.arange(512), tr], axis=1))
        peaks = hough_sinusoid(np.concatenate(pts), g512)
        assert len(peaks) == 2
        for cx, cy in ((300.0, 200.0), (150.0, 350.0)):
            err = min(np.hypot(p.cx - cx, p.cy - cy) for p in peaks)
            assert err <= 1.0

    def test_empty_points_rejected(self, g512):
        with pytest.raises(ValidationError):
            hough_sinusoid(np.empty((0, 2)), g512)

    def test_grid_step_consistency(self, g512):
        tr = point_trace(210.5, 330.2, g512)
        pts = np.stack([np.arange(512), tr], axis=1)
        peaks = hough_sinusoid(pts, g512, grid_step=2.0)
        assert len(peaks) == 1
        err = np.hypot(peaks[0].cx - 210.5, peaks[0].cy - 330.2)
        assert err <= 2.0


class TestReclassify:
    def test_single_path_labeled_one(self, g512):
        tr = point_trace(300.0, 240.0, g512)
        sk = skeletonize(rasterize_traces([tr], 4.0, g512))
        out = reclassify(sk, g512)
        assert set(out.labels) == {1}
        assert len(out.sinusoids) == 1

    def test_blocks_merge_to_single_sinusoid(self, g512):
        tr = point_trace(300.0, 240.0, g512)
        mask = rasterize_traces([tr], 4.0, g512)
        mask[250:260] = 0
        sk = skeletonize(mask)
        assert set(provisional_labels(sk)) == {1, 2}
        out = reclassify(sk, g512)
        assert set(out.labels) == {1}

    def test_two_paths_no_swaps(self, g512):
        c1, c2 = (300.0, 200.0), (200.0, 300.0)
        tr1, tr2 = point_trace(*c1, g512), point_trace(*c2, g512)
        mask = rasterize_traces([tr1, tr2], 5.0, g512)
        sk = remove_intersections(skeletonize(mask))
        out = reclassify(sk, g512)
        assert len(out.sinusoids) == 2
        # map sinusoid index -> true center
        sin_to_true = {}
        for k, s in enumerate(out.sinusoids, start=1):
            d1 = np.hypot(s.cx - c1[0], s.cy - c1[1])
            d2 = np.hypot(s.cx - c2[0], s.cy - c2[1])
            sin_to_true[k] = 1 if d1 < d2 else 2
            assert min(d1, d2) <= 1.0
        assert set(sin_to_true.values()) == {1, 2}
        swaps = 0
        for run, lb in zip(out.runs, out.labels):
            true_s = tr1[run.row] if sin_to_true[lb] == 1 else tr2[run.row]
            if abs(run.center - true_s) > 4.0:
                swaps += 1
        assert swaps == 0

    def test_empty_skeleton_warns(self, g512, caplog):
        sk = Skeleton(n_rows=512, n_cols=512, runs=())
        with caplog.at_level("WARNING", logger="sinolocate.instanceseg"):
            out = reclassify(sk, g512)
        assert out.runs == ()


class TestDilate:
    def test_exact_reproduction_without_removals(self, g512):
        tr = point_trace(280.0, 230.0, g512)
        mask = rasterize_traces([tr], 6.0, g512)
        sk = skeletonize(mask)
        labeled = sk.with_labels([1] * len(sk.runs), [SinusoidParams(280.0, 230.0)])
        out = dilate_to_masks(labeled, g512)
        assert len(out) == 1
        np.testing.assert_array_equal(out[0], mask)

    def test_refill_width_rule(self, g512):
        # removed row gets a run of width 2*rbar+1 centered at the fit
        cx, cy = 280.0, 230.0
        tr = point_trace(cx, cy, g512)
        mask = rasterize_traces([tr], 4.0, g512)
        full_sk = skeletonize(mask)
        keep = [r for r in full_sk.runs if r.row != 100]
        sk = Skeleton(512, 512, tuple(keep), tuple([1] * len(keep)),
                      removed_rows=frozenset({100}),
                      sinusoids=(SinusoidParams(cx, cy),))
        out = dilate_to_masks(sk, g512)[0]
        nz = np.nonzero(out[100])[0]
        assert len(nz) == 2 * 4 + 1
        s = SinusoidParams(cx, cy).trace_at(g512, 100)
        assert abs((nz[0] + nz[-1]) / 2.0 - s) <= 0.5

    def test_two_defect_or_covers_union(self, g512):
        # full pipeline on a simulated two-defect sample: the OR of the
        # per-defect outputs covers essentially all of the union mask
        g = ScanGeometry.square(256)
        clean = gen_phantom(12, g)
        defected, recs = inject_manual(
            clean, [(95.0, 120.0, 10.0), (170.0, 150.0, 9.0)], seed=2)
        _sc, _sd, union, _per = gt_masks(clean, defected, recs, g)
        res = separate_instances(union, g)
        assert len(res.masks) == 2
        orred = res.masks[0] | res.masks[1]
        covered = (orred & union).sum() / union.sum()
        assert covered >= 0.99


class TestSeparateInstances:
    def test_counts_and_assignment(self, g512):
        centers = [(300.0, 200.0), (180.0, 320.0), (255.5, 255.5)]
        traces = [point_trace(cx, cy, g512) for cx, cy in centers]
        mask = rasterize_traces(traces, 6.0, g512)
        res = separate_instances(mask, g512)
        assert len(res.masks) == 3
        for cx, cy in centers:
            err = min(np.hypot(s.cx - cx, s.cy - cy) for s in res.sinusoids)
            assert err <= 1.0

    def test_empty_mask(self, g512):
        res = separate_instances(np.zeros((512, 512), dtype=np.uint8), g512)
        assert res.masks == []
