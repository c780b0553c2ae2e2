"""Procedural phantom generation, defect injection, labels, and datasets.

Phantoms composite a handful of random primitives (axis-aligned rectangles,
rotated ellipses, convex polygons) inside the inscribed circle; defects add
patches of high-attenuation Gaussian noise. Labels live in sinogram space:
a sinogram pixel is foreground when the defected projection exceeds the
clean one by more than eps.
"""

from __future__ import annotations

import json
import math
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import ndimage

from .core import (CapacityError, DefectRecord, ScanGeometry, ValidationError,
                   records_to_json, write_raster)
from .projector import point_trace, radon

# defects must stay this far inside the inscribed circle (pixels)
PLACEMENT_MARGIN = 30.0
# label threshold, relative to the defected sinogram's maximum
EPS_REL = 1e-3


@dataclass(frozen=True)
class DatasetSpec:
    """Everything needed to reproduce a dataset bit for bit."""

    seed: int
    n_phantoms: int
    image_size: int = 512
    n_angles: int | None = None
    detector_w: int | None = None
    defect_shape: str = "circle"
    defects_per_phantom: tuple[int, int] = (1, 3)
    radius_range: tuple[float, float] = (8.0, 30.0)
    rotations_deg: tuple[float, ...] = (0.0,)
    splits: dict = field(default_factory=lambda: {"train": 0.8, "val": 0.1, "test": 0.1})
    # optional: reject defect pairs whose center traces come closer than
    # min_trace_sep_bins at more than (1 - min_trace_sep_frac) of the angles
    min_trace_sep_bins: float = 0.0
    min_trace_sep_frac: float = 0.9

    def __post_init__(self):
        if self.defect_shape not in ("circle", "square"):
            raise ValidationError(f"defect_shape must be circle|square, "
                                  f"got {self.defect_shape!r}")
        lo, hi = self.defects_per_phantom
        if lo < 0 or hi < lo:
            raise ValidationError(
                f"defects_per_phantom range invalid: ({lo}, {hi})")
        r_lo, r_hi = self.radius_range
        if not (1.0 <= r_lo <= r_hi <= self.image_size / 8):
            raise ValidationError(
                f"radius_range must lie within [1, {self.image_size / 8}], "
                f"got ({r_lo}, {r_hi})")
        if not self.rotations_deg:
            raise ValidationError("rotations_deg must be non-empty")
        if self.n_phantoms < 0:
            raise ValidationError(f"n_phantoms must be >= 0, got {self.n_phantoms}")

    def geometry(self) -> ScanGeometry:
        return ScanGeometry.square(
            self.image_size,
            self.image_size if self.n_angles is None else self.n_angles,
            self.image_size if self.detector_w is None else self.detector_w)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["defects_per_phantom"] = list(self.defects_per_phantom)
        d["radius_range"] = list(self.radius_range)
        d["rotations_deg"] = list(self.rotations_deg)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        d = dict(d)
        for key in ("defects_per_phantom", "radius_range", "rotations_deg"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "DatasetSpec":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def gen_phantom(seed, g: ScanGeometry) -> np.ndarray:
    """Deterministic random phantom: 3..8 additive primitives, values 0.2..1.0.

    All support stays inside the inscribed circle (with margin), so the
    projector's exactness guarantees apply.
    """
    rng = np.random.default_rng(seed)
    w = g.image_w
    cx0, cy0 = g.rot_center
    r_cap = 0.45 * w
    canvas = np.zeros((g.image_h, g.image_w))
    ys, xs = np.mgrid[0:g.image_h, 0:g.image_w]
    n_prims = int(rng.integers(3, 9))
    for _ in range(n_prims):
        ext = rng.uniform(0.04, 0.18) * w
        dist = math.sqrt(rng.uniform()) * max(r_cap - ext, 0.0)
        ang = rng.uniform(0.0, 2.0 * math.pi)
        cx = cx0 + dist * math.cos(ang)
        cy = cy0 + dist * math.sin(ang)
        value = rng.uniform(0.2, 1.0)
        kind = int(rng.integers(0, 3))
        if kind == 0:  # axis-aligned rectangle, circumradius <= ext
            a = ext * rng.uniform(0.35, 1.0) / math.sqrt(2.0)
            b = ext * rng.uniform(0.35, 1.0) / math.sqrt(2.0)
            inside = (np.abs(xs - cx) <= a) & (np.abs(ys - cy) <= b)
        elif kind == 1:  # rotated ellipse
            ea = ext * rng.uniform(0.35, 1.0)
            eb = ext * rng.uniform(0.35, 1.0)
            phi = rng.uniform(0.0, math.pi)
            u = (xs - cx) * math.cos(phi) + (ys - cy) * math.sin(phi)
            v = -(xs - cx) * math.sin(phi) + (ys - cy) * math.cos(phi)
            inside = (u / ea) ** 2 + (v / eb) ** 2 <= 1.0
        else:  # convex polygon: vertices on a circle at sorted angles
            k = int(rng.integers(3, 7))
            th = np.sort(rng.uniform(0.0, 2.0 * math.pi, size=k))
            px = cx + ext * np.cos(th)
            py = cy + ext * np.sin(th)
            inside = np.ones_like(canvas, dtype=bool)
            for e in range(k):
                x1, y1 = px[e], py[e]
                x2, y2 = px[(e + 1) % k], py[(e + 1) % k]
                cross = (x2 - x1) * (ys - y1) - (y2 - y1) * (xs - x1)
                inside &= cross >= 0.0
        canvas[inside] += value
    return canvas


def rotate_phantom(phantom: np.ndarray, degrees: float) -> np.ndarray:
    """Rotation augmentation: bilinear resample about the image center."""
    if degrees == 0.0:
        return phantom.copy()
    out = ndimage.rotate(phantom, degrees, reshape=False, order=1,
                         mode="constant", cval=0.0, prefilter=False)
    np.maximum(out, 0.0, out=out)
    return out


def _defect_support(shape, cx, cy, radius, xs, ys):
    if shape == "circle":
        return (xs - cx) ** 2 + (ys - cy) ** 2 <= radius * radius
    return (np.abs(xs - cx) <= radius) & (np.abs(ys - cy) <= radius)


def _trace_separation_ok(cand, placed, g, min_bins, min_frac):
    if min_bins <= 0.0:
        return True
    t_new = point_trace(cand[0], cand[1], g)
    for (pcx, pcy, _r) in placed:
        t_old = point_trace(pcx, pcy, g)
        frac = np.mean(np.abs(t_new - t_old) >= min_bins)
        if frac < min_frac:
            return False
    return True


def inject_defects(phantom: np.ndarray, n: int, spec: DatasetSpec,
                   seed) -> tuple[np.ndarray, list[DefectRecord]]:
    """Add n non-overlapping high-attenuation patches; returns new raster + records.

    Patch pixels are i.i.d. Gaussian with mean 1.5x the phantom maximum and
    sigma 0.1x that mean, clamped positive, added onto the phantom. Centers
    are rejection-sampled inside the inscribed circle minus a 30 px margin,
    with pairwise center distance > r_a + r_b + 2.
    """
    rng = np.random.default_rng(seed)
    g_w = phantom.shape[1]
    cx0 = (phantom.shape[1] - 1) / 2.0
    cy0 = (phantom.shape[0] - 1) / 2.0
    r_place = g_w / 2.0 - PLACEMENT_MARGIN
    if r_place <= 0:
        raise CapacityError(f"image of size {g_w} has no placement region")
    peak = float(phantom.max())
    mean = 1.5 * peak if peak > 0 else 1.5
    sigma = 0.1 * mean
    geom = ScanGeometry.square(phantom.shape[1])

    placed = []  # (cx, cy, radius)
    r_lo, r_hi = spec.radius_range
    for _ in range(n):
        for attempt in range(10_000):
            radius = rng.uniform(r_lo, r_hi)
            dist = math.sqrt(rng.uniform()) * (r_place - 0.0)
            ang = rng.uniform(0.0, 2.0 * math.pi)
            cx = cx0 + dist * math.cos(ang)
            cy = cy0 + dist * math.sin(ang)
            ok = all(math.hypot(cx - px, cy - py) > radius + pr + 2.0
                     for (px, py, pr) in placed)
            if ok and _trace_separation_ok(
                    (cx, cy), placed, geom,
                    spec.min_trace_sep_bins, spec.min_trace_sep_frac):
                placed.append((cx, cy, radius))
                break
        else:
            raise CapacityError(
                f"could not place defect {len(placed) + 1} of {n} after "
                f"10000 attempts")

    out = phantom.copy()
    records = []
    ys, xs = np.mgrid[0:phantom.shape[0], 0:phantom.shape[1]]
    for i, (cx, cy, radius) in enumerate(placed):
        support = _defect_support(spec.defect_shape, cx, cy, radius, xs, ys)
        vals = rng.normal(mean, sigma, size=int(support.sum()))
        out[support] += np.maximum(vals, 1e-6)
        records.append(DefectRecord(
            id=i, shape=spec.defect_shape, center=(cx, cy), radius=radius,
            intensity_mean=mean, intensity_sigma=sigma))
    return out, records


def default_eps(sino_defected: np.ndarray) -> float:
    return EPS_REL * float(sino_defected.max())


def gt_masks(clean: np.ndarray, defected: np.ndarray,
             records: list[DefectRecord], g: ScanGeometry,
             eps: float | None = None):
    """Project clean/defected and threshold the difference into label masks.

    Returns (sino_clean, sino_defected, union_mask, per_defect_masks).
    The union mask is 1 where the defected sinogram exceeds the clean one by
    more than eps; each per-defect mask projects that defect's patch alone
    and applies the identical threshold.
    """
    if clean.shape != defected.shape:
        raise ValidationError(
            f"raster dims differ: {clean.shape} vs {defected.shape}")
    sino_clean = radon(clean, g)
    sino_def = radon(defected, g)
    if eps is None:
        eps = default_eps(sino_def)
    union = ((sino_def - sino_clean) > eps).astype(np.uint8)
    per_defect = []
    diff_img = defected - clean
    ys, xs = np.mgrid[0:clean.shape[0], 0:clean.shape[1]]
    for rec in records:
        support = _defect_support(rec.shape, rec.center[0], rec.center[1],
                                  rec.radius, xs, ys)
        patch = np.where(support, diff_img, 0.0)
        sino_patch = radon(patch, g)
        per_defect.append((sino_patch > eps).astype(np.uint8))
    return sino_clean, sino_def, union, per_defect


@dataclass(frozen=True)
class SamplePlan:
    index: int
    sample_id: str
    phantom_idx: int
    rot_idx: int
    rot_deg: float
    split: str


def enumerate_samples(spec: DatasetSpec) -> list[SamplePlan]:
    """Expand a spec into its deterministic sample list (no I/O).

    Training phantoms get one sample per rotation in the schedule; val/test
    phantoms are not augmented (rotation 0 only).
    """
    fr = spec.splits
    n_train = int(round(fr.get("train", 0.0) * spec.n_phantoms))
    n_val = int(round(fr.get("val", 0.0) * spec.n_phantoms))
    n_train = min(n_train, spec.n_phantoms)
    n_val = min(n_val, spec.n_phantoms - n_train)

    def split_of(p):
        if p < n_train:
            return "train"
        if p < n_train + n_val:
            return "val"
        return "test"

    plans = []
    idx = 0
    for p in range(spec.n_phantoms):
        split = split_of(p)
        rots = list(enumerate(spec.rotations_deg)) if split == "train" else [(0, 0.0)]
        for ri, deg in rots:
            plans.append(SamplePlan(
                index=idx, sample_id=f"p{p:05d}_r{ri:03d}", phantom_idx=p,
                rot_idx=ri, rot_deg=float(deg), split=split))
            idx += 1
    return plans


def _build_sample(spec: DatasetSpec, plan: SamplePlan, out_dir: str) -> dict:
    g = spec.geometry()
    phantom = gen_phantom(np.random.SeedSequence([spec.seed, plan.phantom_idx, 0]), g)
    clean = rotate_phantom(phantom, plan.rot_deg)
    rng = np.random.default_rng(
        np.random.SeedSequence([spec.seed, plan.phantom_idx, plan.rot_idx, 1]))
    lo, hi = spec.defects_per_phantom
    n_defects = int(rng.integers(lo, hi + 1))
    defected, records = inject_defects(
        clean, n_defects, spec,
        np.random.SeedSequence([spec.seed, plan.phantom_idx, plan.rot_idx, 2]))
    sino_clean, sino_def, union, per_defect = gt_masks(clean, defected, records, g)

    sdir = os.path.join(out_dir, "samples", plan.sample_id)
    os.makedirs(sdir, exist_ok=True)
    rel = lambda name: os.path.join("samples", plan.sample_id, name)
    try:
        write_raster(sino_clean.astype(np.float32), os.path.join(sdir, "clean.sgr"))
        write_raster(sino_def.astype(np.float32), os.path.join(sdir, "sino.sgr"))
        write_raster(union, os.path.join(sdir, "mask.sgr"))
        inst_paths = []
        for k, m in enumerate(per_defect):
            name = f"instance_{k:02d}.sgr"
            write_raster(m, os.path.join(sdir, name))
            inst_paths.append(rel(name))
        records_to_json(records, os.path.join(sdir, "records.json"))
    except OSError as e:
        raise OSError(f"sample {plan.index} ({plan.sample_id}): {e}") from e
    return {
        "id": plan.sample_id,
        "seed": spec.seed,
        "split": plan.split,
        "n_defects": len(records),
        "paths": {
            "clean_sino": rel("clean.sgr"),
            "sino": rel("sino.sgr"),
            "mask": rel("mask.sgr"),
            "instance_masks": inst_paths,
            "records": rel("records.json"),
        },
    }


def gen_dataset(spec: DatasetSpec, out_dir, jobs: int = 1) -> dict:
    """Generate every sample of the spec under out_dir; returns the manifest.

    Fully deterministic: regenerating with the same spec produces byte
    identical rasters. Samples are independent, so jobs > 1 fans them out
    across processes; the manifest always lists them in enumeration order.
    """
    plans = enumerate_samples(spec)
    os.makedirs(out_dir, exist_ok=True)
    if jobs > 1 and len(plans) > 1:
        # spawn: the JIT'd projector's threading layer does not survive fork
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
            entries = list(pool.map(_build_sample,
                                    [spec] * len(plans), plans,
                                    [str(out_dir)] * len(plans),
                                    chunksize=4))
    else:
        entries = [_build_sample(spec, plan, str(out_dir)) for plan in plans]
    manifest = {"spec": spec.to_dict(), "samples": entries}
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return manifest


def load_manifest(path) -> dict:
    with open(path) as f:
        return json.load(f)
