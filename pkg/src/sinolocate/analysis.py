"""Estimate defect center and size from a single-defect sinogram mask.

Circular defects: the run centers trace the center's sinusoid, so the
Hough fit gives the center directly and the run half-widths give the
radius. Non-circular defects: intersect the two projection strips of the
shortest extent and its perpendicular counterpart (the enclosing box);
the strip midlines cross at the center.
"""

from __future__ import annotations

import math

import numpy as np

from .core import DefectEstimate, ScanGeometry, ValidationError, validate_mask
from .instanceseg import hough_sinusoid, skeletonize

# extent spread below which a mask is treated as circular by auto routing
CIRCLE_SPREAD_MAX = 0.05


def circle_box(defect_mask: np.ndarray, g: ScanGeometry,
               grid_step: float = 1.0) -> DefectEstimate:
    """Fit the center sinusoid of a circular defect; radius from run widths."""
    mask = validate_mask(defect_mask)
    sk = skeletonize(mask)
    if not sk.runs:
        raise ValidationError("circle_box: empty mask")
    peaks = hough_sinusoid(sk.points(), g, grid_step=grid_step,
                           min_votes=0.35 * g.n_angles)
    if not peaks:
        raise ValidationError("circle_box: no center trace found in mask")
    center = peaks[0]
    radius = float(np.median([r.radius for r in sk.runs]))
    if radius <= 0:
        radius = 0.5
    return DefectEstimate(center=(center.cx, center.cy),
                          area=math.pi * radius * radius,
                          method="circlebox", radius=radius)


def _row_extents(mask: np.ndarray):
    """Per-row (extent, midline) of the union of runs; NaN on empty rows."""
    n_rows, n_cols = mask.shape
    any_fg = mask.any(axis=1)
    first = mask.argmax(axis=1)
    last = n_cols - 1 - mask[:, ::-1].argmax(axis=1)
    extent = np.where(any_fg, last - first + 1, np.nan).astype(np.float64)
    mid = np.where(any_fg, (first + last) / 2.0, np.nan)
    return extent, mid


def _midline_intersection(g: ScanGeometry, row_i: int, m_i: float,
                          row_j: int, m_j: float) -> tuple[float, float]:
    # midline of row k: (x-cx0)cos(th_k) + (y-cy0)sin(th_k) = m_k - s0.
    # Solve the 2x2 system with each row's actual angle: the perpendicular
    # partner of a row in the second half of the grid wraps around to
    # theta - pi/2, which mirrors the detector coordinate.
    cx0, cy0 = g.rot_center
    s0 = g.det_center
    ti = g.angle_of(row_i)
    tj = g.angle_of(row_j)
    d_i = m_i - s0
    d_j = m_j - s0
    det = math.cos(ti) * math.sin(tj) - math.sin(ti) * math.cos(tj)
    if abs(det) < 1e-9:
        raise ValidationError(f"rows {row_i} and {row_j} are not transverse")
    x = cx0 + (d_i * math.sin(tj) - d_j * math.sin(ti)) / det
    y = cy0 + (d_j * math.cos(ti) - d_i * math.cos(tj)) / det
    return x, y


def overlap_box(defect_mask: np.ndarray, g: ScanGeometry,
                average_pairs: bool = False) -> DefectEstimate:
    """Enclosing-box estimate from the shortest projection and its perpendicular.

    With average_pairs the center is averaged over every perpendicular row
    pair instead (costlier, occasionally steadier for blocky shapes); the
    extents still come from the shortest pair.
    """
    mask = validate_mask(defect_mask)
    if g.n_angles % 2 != 0:
        raise ValidationError("overlap_box needs an even angle count so an "
                              "exactly perpendicular row exists")
    if mask.shape != g.sinogram_shape():
        raise ValidationError(f"mask shape {mask.shape} does not match "
                              f"sinogram {g.sinogram_shape()}")
    if not mask.any():
        raise ValidationError("overlap_box: empty mask")
    extent, mid = _row_extents(mask)
    half = g.n_angles // 2
    partner = (np.arange(g.n_angles) + half) % g.n_angles
    valid = ~np.isnan(extent) & ~np.isnan(extent[partner])
    if not valid.any():
        raise ValidationError("overlap_box: insufficient angular coverage "
                              "(no row has a non-empty perpendicular partner)")
    masked = np.where(valid, extent, np.inf)
    i_star = int(np.argmin(masked))
    j_star = int(partner[i_star])
    u = float(extent[i_star])
    v = float(extent[j_star])
    if average_pairs:
        idx = [i for i in range(half) if valid[i] and valid[i + half]]
        pts = [_midline_intersection(g, i, float(mid[i]),
                                     i + half, float(mid[i + half]))
               for i in idx]
        cx = float(np.mean([p[0] for p in pts]))
        cy = float(np.mean([p[1] for p in pts]))
    else:
        cx, cy = _midline_intersection(g, i_star, float(mid[i_star]),
                                       j_star, float(mid[j_star]))
    return DefectEstimate(center=(cx, cy), area=u * v, method="overlapbox",
                          extents=(u, v))


def extent_spread(defect_mask: np.ndarray) -> float:
    """Coefficient of variation of per-row extents (0 for a perfect disc)."""
    mask = validate_mask(defect_mask)
    extent, _ = _row_extents(mask)
    vals = extent[~np.isnan(extent)]
    if vals.size == 0:
        raise ValidationError("extent_spread: empty mask")
    return float(vals.std() / vals.mean())


def analyze(masks, shape_hint: str, g: ScanGeometry) -> list[DefectEstimate]:
    """Route each mask to the right estimator.

    shape_hint: "circle" -> circle_box, "square" -> overlap_box, "auto" ->
    discs have constant extent across rows, so a small extent spread picks
    circle_box and anything else goes to overlap_box.
    """
    if shape_hint not in ("circle", "square", "auto"):
        raise ValidationError(f"shape_hint must be circle|square|auto, "
                              f"got {shape_hint!r}")
    out = []
    for i, m in enumerate(masks):
        try:
            if shape_hint == "circle":
                out.append(circle_box(m, g))
            elif shape_hint == "square":
                out.append(overlap_box(m, g))
            else:
                if extent_spread(m) <= CIRCLE_SPREAD_MAX:
                    out.append(circle_box(m, g))
                else:
                    out.append(overlap_box(m, g))
        except ValidationError as e:
            raise ValidationError(f"mask {i}: {e}") from e
    return out
