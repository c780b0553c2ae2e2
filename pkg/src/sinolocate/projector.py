"""2D parallel-beam forward projection and the analytic center trace.

The projector is ray-driven: for every (angle, detector bin) pair one ray
crosses the image, and the line integral of the bilinearly interpolated
image is accumulated along it. Between two consecutive pixel-boundary
crossings the interpolant restricted to the ray is a quadratic in the ray
parameter, so each segment is integrated in closed form; the result is the
exact line integral of the interpolant, not a sampled approximation.

Rays are clipped against the bounding box and bounding circle of the
nonzero support, which makes projecting small patches (defect labels)
cheap and skips the empty corners of full phantoms.
"""

from __future__ import annotations

import numpy as np
from numba import config as _numba_config
from numba import njit, prange

from .core import ScanGeometry, ValidationError

# pick the OpenMP layer up front; the default probes TBB first and the
# probe warns on the TBB builds this kernel never uses
if _numba_config.THREADING_LAYER == "default":
    _numba_config.THREADING_LAYER = "omp"

_BIG = 1e30


@njit(cache=True, parallel=True, fastmath=True)
def _project(img_pad, cos_a, sin_a, cx0, cy0, s0,
             ccx, ccy, cr2, x_lo, x_hi, y_lo, y_hi, j_lo, j_hi, out):
    # img_pad carries a one-pixel zero border; sample coords shift by +1.
    n_ang = cos_a.shape[0]
    for i in prange(n_ang):
        c = cos_a[i]
        s = sin_a[i]
        vx = -s  # ray direction, perpendicular to the detector axis
        vy = c
        dtx = 1.0 / abs(vx) if vx != 0.0 else _BIG
        dty = 1.0 / abs(vy) if vy != 0.0 else _BIG
        for j in range(j_lo[i], j_hi[i] + 1):
            d = j - s0
            bx = cx0 + d * c
            by = cy0 + d * s
            # clip against the support's bounding circle
            mx = bx - ccx
            my = by - ccy
            tc = -(mx * vx + my * vy)
            disc = tc * tc - (mx * mx + my * my - cr2)
            if disc <= 0.0:
                continue
            rt = np.sqrt(disc)
            t0 = tc - rt
            t1 = tc + rt
            # and against the bounding box
            if vx != 0.0:
                ta = (x_lo - bx) / vx
                tb = (x_hi - bx) / vx
                if ta > tb:
                    ta, tb = tb, ta
                if ta > t0:
                    t0 = ta
                if tb < t1:
                    t1 = tb
            elif bx < x_lo or bx > x_hi:
                continue
            if vy != 0.0:
                ta = (y_lo - by) / vy
                tb = (y_hi - by) / vy
                if ta > tb:
                    ta, tb = tb, ta
                if ta > t0:
                    t0 = ta
                if tb < t1:
                    t1 = tb
            elif by < y_lo or by > y_hi:
                continue
            if t1 <= t0:
                continue
            # first crossing of a vertical / horizontal pixel boundary
            if dtx != _BIG:
                xq = bx + t0 * vx
                if vx > 0:
                    tx = t0 + (np.floor(xq) + 1.0 - xq) / vx
                else:
                    tx = t0 + (np.ceil(xq) - 1.0 - xq) / vx
            else:
                tx = _BIG
            if dty != _BIG:
                yq = by + t0 * vy
                if vy > 0:
                    ty = t0 + (np.floor(yq) + 1.0 - yq) / vy
                else:
                    ty = t0 + (np.ceil(yq) - 1.0 - yq) / vy
            else:
                ty = _BIG
            bxp = bx + 1.0
            byp = by + 1.0
            acc = 0.0
            t = t0
            while t < t1:
                tn = tx if tx < ty else ty
                if tn > t1:
                    tn = t1
                if tn > t:
                    # cell of the segment midpoint; integrate the bilinear
                    # patch v00 + g1*x + g2*y + g3*x*y along the segment
                    half = 0.5 * (t + tn)
                    xm = bxp + half * vx
                    ym = byp + half * vy
                    x0 = int(np.floor(xm))
                    y0 = int(np.floor(ym))
                    v00 = img_pad[y0, x0]
                    v10 = img_pad[y0, x0 + 1]
                    v01 = img_pad[y0 + 1, x0]
                    v11 = img_pad[y0 + 1, x0 + 1]
                    g1 = v10 - v00
                    g2 = v01 - v00
                    g3 = v11 - v10 - v01 + v00
                    xa = bxp + t * vx - x0
                    ya = byp + t * vy - y0
                    dt_ = tn - t
                    a0 = v00 + g1 * xa + g2 * ya + g3 * xa * ya
                    a1 = g1 * vx + g2 * vy + g3 * (xa * vy + ya * vx)
                    a2 = g3 * vx * vy
                    acc += dt_ * (a0 + dt_ * (0.5 * a1 + dt_ * a2 * (1.0 / 3.0)))
                    t = tn
                if tx <= tn:
                    tx += dtx
                if ty <= tn:
                    ty += dty
            out[i, j] = acc
    return out


def radon(phantom: np.ndarray, g: ScanGeometry) -> np.ndarray:
    """Forward-project a phantom into its sinogram.

    sinogram[i, j] is the line integral along the ray at angle theta_i
    whose detector coordinate is j (bin width = 1 pixel). Returns float64
    of shape (n_angles, detector_w).
    """
    phantom = np.asarray(phantom)
    if phantom.shape != (g.image_h, g.image_w):
        raise ValidationError(
            f"phantom shape {phantom.shape} does not match geometry "
            f"{(g.image_h, g.image_w)}")
    out = np.zeros(g.sinogram_shape())
    ys, xs = np.nonzero(phantom)
    if len(xs) == 0:
        return out
    cx0, cy0 = g.rot_center
    s0 = g.det_center
    cos_a = np.cos(g.angles)
    sin_a = np.sin(g.angles)
    x_lo, x_hi = xs.min() - 1.0, xs.max() + 1.0
    y_lo, y_hi = ys.min() - 1.0, ys.max() + 1.0
    ccx = 0.5 * (x_lo + x_hi)
    ccy = 0.5 * (y_lo + y_hi)
    cr = np.sqrt(((xs - ccx) ** 2 + (ys - ccy) ** 2).max()) + 1.6
    # per-angle detector window from the support box corners
    corx = np.array([x_lo, x_hi, x_lo, x_hi]) - cx0
    cory = np.array([y_lo, y_lo, y_hi, y_hi]) - cy0
    sc = s0 + corx[None, :] * cos_a[:, None] + cory[None, :] * sin_a[:, None]
    j_lo = np.clip(np.floor(sc.min(axis=1) - 1), 0, g.detector_w - 1).astype(np.int64)
    j_hi = np.clip(np.ceil(sc.max(axis=1) + 1), 0, g.detector_w - 1).astype(np.int64)
    img_pad = np.zeros((g.image_h + 2, g.image_w + 2))
    img_pad[1:-1, 1:-1] = phantom
    _project(img_pad, cos_a, sin_a, cx0, cy0, s0, ccx, ccy, cr * cr,
             x_lo, x_hi, y_lo, y_hi, j_lo, j_hi, out)
    return out


def point_trace(cx: float, cy: float, g: ScanGeometry) -> np.ndarray:
    """Detector coordinate of an image point at every angle.

    s(theta_i) = s0 + (cx-cx0)cos(theta_i) + (cy-cy0)sin(theta_i); the
    returned array has one entry per sinogram row.
    """
    if not (0 <= cx < g.image_w and 0 <= cy < g.image_h):
        raise ValidationError(f"point ({cx}, {cy}) lies outside the image")
    cx0, cy0 = g.rot_center
    th = g.angles
    return g.det_center + (cx - cx0) * np.cos(th) + (cy - cy0) * np.sin(th)


def warmup() -> None:
    """Trigger JIT compilation on a tiny input (cached across processes)."""
    g = ScanGeometry.square(8)
    tiny = np.zeros((8, 8))
    tiny[3, 4] = 1.0
    radon(tiny, g)
