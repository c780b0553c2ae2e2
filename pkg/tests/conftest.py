import numpy as np
import pytest

from sinolocate.core import DefectRecord, ScanGeometry
from sinolocate.projector import warmup


@pytest.fixture(scope="session", autouse=True)
def _jit_warmup():
    # compile the projector kernel once so timings elsewhere are clean
    warmup()


@pytest.fixture(scope="session")
def g512():
    return ScanGeometry.square(512)


def disc_image(size, cx, cy, r, value=1.0):
    ys, xs = np.mgrid[0:size, 0:size]
    img = np.zeros((size, size))
    img[(xs - cx) ** 2 + (ys - cy) ** 2 <= r * r] = value
    return img


def square_image(size, cx, cy, half, value=1.0):
    ys, xs = np.mgrid[0:size, 0:size]
    img = np.zeros((size, size))
    img[(np.abs(xs - cx) <= half) & (np.abs(ys - cy) <= half)] = value
    return img


def dense_line_integrals(img, theta, g, step=0.01):
    """Brute-force oracle: dense midpoint sampling of the bilinear interpolant.

    Deliberately independent of the projector's segment-exact quadrature;
    plain Riemann sums over a fine t grid, restricted to the support box.
    """
    h, w = img.shape
    cx0, cy0 = g.rot_center
    s0 = g.det_center
    c, s = np.cos(theta), np.sin(theta)
    ys_nz, xs_nz = np.nonzero(img)
    if len(xs_nz) == 0:
        return np.zeros(g.detector_w)
    # t-range covering the support box (plus interpolation margin)
    corners = np.array([[x, y] for x in (xs_nz.min() - 2, xs_nz.max() + 2)
                        for y in (ys_nz.min() - 2, ys_nz.max() + 2)], float)
    tvals = -(corners[:, 0] - cx0) * s + (corners[:, 1] - cy0) * c
    t = np.arange(tvals.min(), tvals.max(), step) + step / 2
    js = np.arange(g.detector_w)
    d = js - s0
    x = cx0 + d[:, None] * c - t[None, :] * s
    y = cy0 + d[:, None] * s + t[None, :] * c
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0
    val = np.zeros_like(x)
    for dx in (0, 1):
        for dy in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            wgt = (fx if dx else 1 - fx) * (fy if dy else 1 - fy)
            val[ok] += img[yi[ok], xi[ok]] * wgt[ok]
    return val.sum(axis=1) * step


def inject_manual(phantom, defects, shape="circle", seed=0):
    """Add defects at explicit (cx, cy, r) positions; returns (raster, records).

    Bypasses placement sampling so tests control geometry exactly; intensity
    follows the generator's rule (Gaussian around 1.5x the phantom max).
    """
    rng = np.random.default_rng(seed)
    out = phantom.copy()
    peak = float(phantom.max())
    mean = 1.5 * peak if peak > 0 else 1.5
    ys, xs = np.mgrid[0:phantom.shape[0], 0:phantom.shape[1]]
    records = []
    for i, (cx, cy, r) in enumerate(defects):
        if shape == "circle":
            sup = (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r
        else:
            sup = (np.abs(xs - cx) <= r) & (np.abs(ys - cy) <= r)
        vals = rng.normal(mean, 0.1 * mean, size=int(sup.sum()))
        out[sup] += np.maximum(vals, 1e-6)
        records.append(DefectRecord(id=i, shape=shape, center=(cx, cy),
                                    radius=r, intensity_mean=mean,
                                    intensity_sigma=0.1 * mean))
    return out, records


def rasterize_traces(traces, radius, g):
    """Binary mask with a [s-radius, s+radius] run per row for each trace."""
    mask = np.zeros(g.sinogram_shape(), dtype=np.uint8)
    for tr in traces:
        for i, s in enumerate(tr):
            left = int(np.floor(s - radius + 0.5))
            right = int(np.floor(s + radius + 0.5))
            left = max(left, 0)
            right = min(right, g.detector_w - 1)
            if left <= right:
                mask[i, left:right + 1] = 1
    return mask
