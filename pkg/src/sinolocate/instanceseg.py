"""Split a union defect mask into per-defect masks.

Pipeline: reduce each row's runs to their centers (skeleton), delete rows
where traces merge (intersections), fit one center-trace sinusoid per
defect with a Hough accumulator over image-space centers, relabel every
run by its nearest sinusoid, then dilate each label back to a mask using
the stored run endpoints (removed rows are refilled from the fit).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import (Run, ScanGeometry, SinusoidParams, Skeleton,
                   ValidationError, validate_mask)

log = logging.getLogger("sinolocate.instanceseg")

# runs in consecutive rows belong to the same path when their centers are
# within this many bins
PATH_LINK_TOL = 3.0
# a run is an intersection leftover when its radius exceeds this multiple
# of its path's median radius
RADIUS_OUTLIER = 1.8
# a run joins a sinusoid's label when the fitted trace passes within this
# many bins of the run center
ASSIGN_TOL = 4.0


def _row_runs(mask: np.ndarray):
    """(starts, ends) column indices of maximal 1-runs, row-major order."""
    rows, cols = mask.shape
    padded = np.zeros((rows, cols + 2), dtype=np.int8)
    padded[:, 1:-1] = mask
    d = np.diff(padded, axis=1)
    starts = np.argwhere(d == 1)
    ends = np.argwhere(d == -1)
    return starts, ends


def skeletonize(mask: np.ndarray) -> Skeleton:
    """Reduce every maximal run of mask pixels to a Run with exact endpoints.

    Lossless: dilating the result reproduces the mask bit for bit.
    """
    mask = validate_mask(mask)
    starts, ends = _row_runs(mask)
    runs = tuple(Run(row=int(s[0]), left=int(s[1]), right=int(e[1]) - 1)
                 for s, e in zip(starts, ends))
    return Skeleton(n_rows=mask.shape[0], n_cols=mask.shape[1], runs=runs)


def close_row_gaps(mask: np.ndarray, max_gap: int = 3) -> np.ndarray:
    """Fill horizontal 0-gaps of length <= max_gap between runs in each row.

    Imperfect segmentation output punches single-pixel holes into runs,
    which fragments the skeleton; true inter-defect gaps this small occur
    only next to trace crossings, which are removed and refilled anyway.
    """
    mask = validate_mask(mask)
    out = mask.copy()
    if max_gap <= 0:
        return out
    starts, ends = _row_runs(mask)
    if len(starts) < 2:
        return out
    same_row = starts[1:, 0] == ends[:-1, 0]
    gap = starts[1:, 1] - ends[:-1, 1]
    for i in np.nonzero(same_row & (gap <= max_gap))[0]:
        out[ends[i, 0], ends[i, 1]:starts[i + 1, 1]] = 1
    return out


def remove_intersections(sk: Skeleton) -> Skeleton:
    """Delete merged-trace artifacts: short rows and oversized runs.

    Rows carrying fewer runs than the 90th percentile of per-row run counts
    are dropped wholesale (crossing traces merge, so the count dips there).
    Surviving runs are linked into paths across consecutive rows, and runs
    whose radius exceeds 1.8x their path's median radius are dropped too.
    Deleted rows are recorded so dilation can refill them from the fit.

    Runs with no path-compatible neighbor in either adjacent row are
    discarded up front: a defect trace is vertically continuous, so an
    isolated run is segmentation speckle, and counting it would skew the
    percentile that the row rule relies on.
    """
    if not sk.runs:
        return sk
    by_row_all: dict[int, list[Run]] = {}
    for r in sk.runs:
        by_row_all.setdefault(r.row, []).append(r)

    def _linked(r: Run) -> bool:
        for adj in (r.row - 1, r.row + 1):
            for other in by_row_all.get(adj, ()):
                if abs(r.center - other.center) <= PATH_LINK_TOL:
                    return True
        return False

    survivors = [r for r in sk.runs if _linked(r)] if sk.n_rows > 1 else list(sk.runs)
    if not survivors:
        survivors = list(sk.runs)
    counts = np.zeros(sk.n_rows, dtype=np.int64)
    for r in survivors:
        counts[r.row] += 1
    k = np.percentile(counts, 90)
    removed = set(int(i) for i in np.nonzero(counts < k)[0])
    runs = [r for r in survivors if counts[r.row] >= k]

    # union-find over path links (consecutive rows, close centers)
    parent = list(range(len(runs)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    by_row: dict[int, list[int]] = {}
    for i, r in enumerate(runs):
        by_row.setdefault(r.row, []).append(i)
    for row, idxs in by_row.items():
        for i in idxs:
            for j in by_row.get(row + 1, ()):
                if abs(runs[i].center - runs[j].center) <= PATH_LINK_TOL:
                    ra, rb = find(i), find(j)
                    if ra != rb:
                        parent[ra] = rb

    groups: dict[int, list[int]] = {}
    for i in range(len(runs)):
        groups.setdefault(find(i), []).append(i)
    drop = set()
    for idxs in groups.values():
        med = float(np.median([runs[i].radius for i in idxs]))
        for i in idxs:
            if runs[i].radius > RADIUS_OUTLIER * med and runs[i].radius > med + 1.0:
                drop.add(i)
    kept = [r for i, r in enumerate(runs) if i not in drop]
    removed.update(runs[i].row for i in drop)
    return Skeleton(sk.n_rows, sk.n_cols, tuple(kept),
                    removed_rows=frozenset(removed))


def provisional_labels(sk: Skeleton) -> tuple[int, ...]:
    """Row-scan labels: ordinal position within a block of non-empty rows.

    Scanning top to bottom, a row's runs get labels s..s+count-1; an empty
    row advances s past the block, so the next block starts fresh. These
    labels only seed the sinusoid refit, which does the real assignment.
    """
    by_row: dict[int, list[int]] = {}
    for i, r in enumerate(sk.runs):
        by_row.setdefault(r.row, []).append(i)
    labels = [0] * len(sk.runs)
    s = 1
    e = 1
    for row in range(sk.n_rows):
        idxs = by_row.get(row)
        if not idxs:
            s = e
            continue
        e = s + len(idxs)
        idxs = sorted(idxs, key=lambda i: sk.runs[i].left)
        for offset, i in enumerate(idxs):
            labels[i] = s + offset
    return tuple(labels)


def hough_sinusoid(points: np.ndarray, g: ScanGeometry,
                   grid_step: float = 1.0,
                   min_votes: float | None = None) -> list[SinusoidParams]:
    """Recover center-trace sinusoids from (row, detector coordinate) points.

    Every point votes for the line of image centers consistent with it:
    (cx-cx0)cos(theta) + (cy-cy0)sin(theta) = s - s0. The accumulator spans
    the image at grid_step resolution; votes split bilinearly between the
    two cells adjacent to the line. Local maxima with at least min_votes
    (default 0.4 * n_angles: a center sitting mid-cell in both axes splits
    its votes over a 2x2 block, so the best single cell can dip to ~0.45 *
    n_angles even for a perfect trace) are refined by the centroid of their
    3x3 neighborhood and greedily deduplicated within 6 px.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.size == 0:
        raise ValidationError("hough_sinusoid needs at least one point")
    if points.ndim != 2 or points.shape[1] != 2:
        raise ValidationError(f"points must be (n, 2), got {points.shape}")
    if min_votes is None:
        min_votes = 0.4 * g.n_angles
    cx0, cy0 = g.rot_center
    s0 = g.det_center
    nx = int(math.ceil(g.image_w / grid_step))
    ny = int(math.ceil(g.image_h / grid_step))
    acc = np.zeros((ny, nx))

    rows = points[:, 0].astype(np.int64)
    theta = rows * (np.pi / g.n_angles)
    d = points[:, 1] - s0
    cos_t = np.cos(theta)
    sin_t = np.sin(theta)

    def deposit(fixed_idx, free_pos, transpose):
        # votes at integer fixed coordinate, fractional free coordinate
        i0 = np.floor(free_pos).astype(np.int64)
        w = free_pos - i0
        lim = nx if not transpose else ny
        for idx, wgt in ((i0, 1.0 - w), (i0 + 1, w)):
            ok = (idx >= 0) & (idx < lim)
            if not ok.any():
                continue
            if transpose:
                np.add.at(acc, (idx[ok], fixed_idx[ok]), wgt[ok])
            else:
                np.add.at(acc, (fixed_idx[ok], idx[ok]), wgt[ok])

    vertical = np.abs(cos_t) >= np.abs(sin_t)
    iy = np.arange(ny)
    ix = np.arange(nx)
    if vertical.any():
        # iterate accumulator rows, solve for cx
        c = cos_t[vertical][:, None]
        s = sin_t[vertical][:, None]
        dd = d[vertical][:, None]
        cy = iy[None, :] * grid_step
        cx = cx0 + (dd - (cy - cy0) * s) / c
        gx = (cx / grid_step).ravel()
        fixed = np.broadcast_to(iy[None, :], cx.shape).ravel()
        deposit(fixed, gx, transpose=False)
    if (~vertical).any():
        c = cos_t[~vertical][:, None]
        s = sin_t[~vertical][:, None]
        dd = d[~vertical][:, None]
        cx = ix[None, :] * grid_step
        cy = cy0 + (dd - (cx - cx0) * c) / s
        gy = (cy / grid_step).ravel()
        fixed = np.broadcast_to(ix[None, :], cy.shape).ravel()
        deposit(fixed, gy, transpose=True)

    is_max = (ndimage.maximum_filter(acc, size=3, mode="constant") == acc)
    cand = np.argwhere(is_max & (acc >= min_votes))
    if len(cand) == 0:
        return []
    votes = acc[cand[:, 0], cand[:, 1]]
    order = np.argsort(-votes, kind="stable")

    refined = []
    for k in order:
        py, px = cand[k]
        y0, y1 = max(py - 1, 0), min(py + 2, ny)
        x0, x1 = max(px - 1, 0), min(px + 2, nx)
        win = acc[y0:y1, x0:x1]
        tot = win.sum()
        wy, wx = np.mgrid[y0:y1, x0:x1]
        cy = float((win * wy).sum() / tot) * grid_step
        cx = float((win * wx).sum() / tot) * grid_step
        refined.append((cx, cy, float(votes[k])))

    peaks: list[SinusoidParams] = []
    for cx, cy, _v in refined:
        if all(math.hypot(cx - p.cx, cy - p.cy) >= 6.0 for p in peaks):
            peaks.append(SinusoidParams(cx, cy))
    return peaks


def reclassify(sk: Skeleton, g: ScanGeometry, grid_step: float = 1.0,
               min_votes: float | None = None,
               assign_tol: float = ASSIGN_TOL) -> Skeleton:
    """Assign a final per-defect label to every run via the sinusoid refit.

    Provisional row-scan labels are computed first, then all run centers
    feed the Hough accumulator; each run takes the label of the nearest
    fitted sinusoid passing within assign_tol bins of its center, which
    merges provisional labels that belong to one defect. Runs claimed by
    no sinusoid are dropped. Intersection-removed rows must already be
    gone (see remove_intersections).
    """
    if sk.n_rows != g.n_angles:
        raise ValidationError(
            f"skeleton has {sk.n_rows} rows but geometry {g.n_angles} angles")
    if not sk.runs:
        log.warning("reclassify: empty skeleton, nothing to label")
        return sk
    prov = provisional_labels(sk)  # row-scan seed; the refit is authoritative
    if min_votes is None:
        # votes can only come from rows that survived intersection removal,
        # and split votes shave the peak further; half the *total* angle
        # count starves defects whose traces overlap for long stretches
        nonempty = len({r.row for r in sk.runs})
        min_votes = max(8.0, 0.35 * nonempty)
    sinusoids = hough_sinusoid(sk.points(), g, grid_step, min_votes)
    if not sinusoids:
        log.warning("reclassify: no sinusoid reached %.0f votes over %d runs",
                    min_votes, len(sk.runs))
        return sk.with_labels([0] * len(sk.runs))

    traces = np.stack([sin.trace(g) for sin in sinusoids])  # (k, n_angles)
    labels = []
    for r in sk.runs:
        dist = np.abs(traces[:, r.row] - r.center)
        best = int(np.argmin(dist))
        labels.append(best + 1 if dist[best] <= assign_tol else 0)

    # drop unclaimed runs and sinusoids that claimed nothing
    used = sorted({lb for lb in labels if lb > 0})
    remap = {old: new + 1 for new, old in enumerate(used)}
    kept_runs = []
    kept_labels = []
    for r, lb in zip(sk.runs, labels):
        if lb > 0:
            kept_runs.append(r)
            kept_labels.append(remap[lb])
    kept_sins = [sinusoids[old - 1] for old in used]
    log.debug("reclassify: %d provisional labels -> %d sinusoids, "
              "%d/%d runs claimed", len(set(prov)), len(kept_sins),
              len(kept_runs), len(sk.runs))
    return Skeleton(sk.n_rows, sk.n_cols, tuple(kept_runs), tuple(kept_labels),
                    sk.removed_rows, tuple(kept_sins))


def dilate_to_masks(sk: Skeleton, g: ScanGeometry | None = None) -> list[np.ndarray]:
    """Rebuild one mask per label from the stored run endpoints.

    Rows deleted by intersection removal are refilled from that label's
    fitted sinusoid as bins [s(theta)-r, s(theta)+r] with r the median run
    radius. An unlabeled skeleton (fresh from skeletonize) dilates to a
    single mask, reproducing its source exactly.
    """
    pos = sorted({lb for lb in sk.labels if lb > 0}) if sk.labels else []
    if pos:
        groups = {lb: [i for i, l in enumerate(sk.labels) if l == lb] for lb in pos}
    else:
        groups = {0: list(range(len(sk.runs)))}
    masks = []
    for lb, idxs in groups.items():
        m = np.zeros((sk.n_rows, sk.n_cols), dtype=np.uint8)
        rows_with_run = set()
        for i in idxs:
            r = sk.runs[i]
            m[r.row, r.left:r.right + 1] = 1
            rows_with_run.add(r.row)
        if lb > 0 and lb <= len(sk.sinusoids) and sk.removed_rows:
            sin = sk.sinusoids[lb - 1]
            if g is None:
                raise ValidationError("geometry required to refill removed rows")
            rbar = float(np.median([sk.runs[i].radius for i in idxs]))
            for row in sorted(sk.removed_rows - rows_with_run):
                s = sin.trace_at(g, row)
                left = int(math.floor(s - rbar + 0.5))
                right = int(math.floor(s + rbar + 0.5))
                left = max(left, 0)
                right = min(right, sk.n_cols - 1)
                if left <= right:
                    m[row, left:right + 1] = 1
        masks.append(m)
    return masks


@dataclass(frozen=True)
class InstanceResult:
    masks: list
    sinusoids: tuple
    skeleton: Skeleton


def separate_instances(mask: np.ndarray, g: ScanGeometry,
                       close_gap: int = 3, grid_step: float = 1.0,
                       min_votes: float | None = None,
                       assign_tol: float = ASSIGN_TOL) -> InstanceResult:
    """Full instance stage: union mask in, one mask per defect out."""
    mask = validate_mask(mask)
    if mask.shape != g.sinogram_shape():
        raise ValidationError(
            f"mask shape {mask.shape} does not match sinogram "
            f"{g.sinogram_shape()}")
    closed = close_row_gaps(mask, close_gap)
    sk = skeletonize(closed)
    sk = remove_intersections(sk)
    labeled = reclassify(sk, g, grid_step, min_votes, assign_tol)
    if not labeled.runs or not labeled.sinusoids:
        return InstanceResult([], (), labeled)
    masks = dilate_to_masks(labeled, g)
    return InstanceResult(masks, labeled.sinusoids, labeled)
