"""Shared domain types, the SGR1 raster container, and PGM rendering.

Rasters are plain 2D numpy arrays throughout the package: float32/float64
for phantoms and sinograms (attenuation / line-integral units), uint8 with
values {0,1} for masks. A sinogram has one row per projection angle and one
column per detector bin.

Image coordinate convention: pixel (x, y) with x = column index and
y = row index. The rotation center sits at ((W-1)/2, (H-1)/2) and the
detector center at s0 = (detector_w-1)/2, so even-sized grids are handled
symmetrically.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, asdict

import numpy as np

SGR_MAGIC = b"SGR1"
SGR_VERSION = 1
_SGR_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("uint8")}
_SGR_CODES = {np.dtype("float32"): 0, np.dtype("uint8"): 1}


class SinolocateError(Exception):
    """Base class for package errors."""


class FormatError(SinolocateError):
    """Malformed raster container or image file."""


class ValidationError(SinolocateError):
    """Input violates a documented precondition (bad mask values, dims...)."""


class CapacityError(SinolocateError):
    """Requested placement cannot be satisfied."""


@dataclass(frozen=True)
class ScanGeometry:
    """Parallel-beam scan description: square image, angle grid, 1D detector.

    Angles are theta_i = i*pi/n_angles for i in [0, n_angles), i.e. a half
    rotation with no repeated ray direction.
    """

    image_w: int
    image_h: int
    n_angles: int
    detector_w: int

    def __post_init__(self):
        if self.image_w != self.image_h:
            raise ValidationError(
                f"image must be square, got {self.image_w}x{self.image_h}")
        if self.n_angles < 2:
            raise ValidationError(f"n_angles must be >= 2, got {self.n_angles}")
        if self.detector_w < 1:
            raise ValidationError(f"detector_w must be >= 1, got {self.detector_w}")

    @classmethod
    def square(cls, size: int, n_angles: int | None = None,
               detector_w: int | None = None) -> "ScanGeometry":
        return cls(size, size,
                   size if n_angles is None else n_angles,
                   size if detector_w is None else detector_w)

    def angle_of(self, i: int) -> float:
        return i * math.pi / self.n_angles

    @property
    def angles(self) -> np.ndarray:
        return np.arange(self.n_angles) * (np.pi / self.n_angles)

    @property
    def rot_center(self) -> tuple[float, float]:
        return ((self.image_w - 1) / 2.0, (self.image_h - 1) / 2.0)

    @property
    def det_center(self) -> float:
        return (self.detector_w - 1) / 2.0

    def sinogram_shape(self) -> tuple[int, int]:
        return (self.n_angles, self.detector_w)


@dataclass(frozen=True)
class Run:
    """One maximal horizontal run of mask pixels in a sinogram row.

    left/right are inclusive detector bins; center and radius are exact
    rationals with denominator 2, so center - radius == left and
    center + radius == right hold exactly.
    """

    row: int
    left: int
    right: int

    def __post_init__(self):
        if self.left > self.right:
            raise ValidationError(f"run left {self.left} > right {self.right}")

    @property
    def center(self) -> float:
        return (self.left + self.right) / 2.0

    @property
    def radius(self) -> float:
        return (self.right - self.left) / 2.0


@dataclass(frozen=True)
class SinusoidParams:
    """Center trace of a defect: s(theta) = s0 + (cx-cx0)cos + (cy-cy0)sin."""

    cx: float
    cy: float

    def amplitude(self, g: ScanGeometry) -> float:
        cx0, cy0 = g.rot_center
        return math.hypot(self.cx - cx0, self.cy - cy0)

    def phase(self, g: ScanGeometry) -> float:
        cx0, cy0 = g.rot_center
        return math.atan2(self.cy - cy0, self.cx - cx0)

    def trace(self, g: ScanGeometry) -> np.ndarray:
        """Detector coordinate of the center at every angle row."""
        cx0, cy0 = g.rot_center
        th = g.angles
        return g.det_center + (self.cx - cx0) * np.cos(th) + (self.cy - cy0) * np.sin(th)

    def trace_at(self, g: ScanGeometry, row: int) -> float:
        cx0, cy0 = g.rot_center
        th = g.angle_of(row)
        return g.det_center + (self.cx - cx0) * math.cos(th) + (self.cy - cy0) * math.sin(th)

    def to_dict(self) -> dict:
        return {"cx": self.cx, "cy": self.cy}


@dataclass(frozen=True)
class Skeleton:
    """Per-row run decomposition of a binary sinogram mask.

    Runs are sorted by (row, left) and disjoint within a row. labels is a
    parallel tuple (0 = unlabeled). removed_rows records rows deleted by
    intersection removal so the dilation stage knows what to refill;
    sinusoids carries the fitted center traces once reclassification ran
    (label k maps to sinusoids[k-1]).
    """

    n_rows: int
    n_cols: int
    runs: tuple[Run, ...]
    labels: tuple[int, ...] = ()
    removed_rows: frozenset[int] = frozenset()
    sinusoids: tuple[SinusoidParams, ...] = ()

    def __post_init__(self):
        if self.labels and len(self.labels) != len(self.runs):
            raise ValidationError("labels length must match runs length")

    def label_of(self, i: int) -> int:
        return self.labels[i] if self.labels else 0

    def with_labels(self, labels, sinusoids=()) -> "Skeleton":
        return Skeleton(self.n_rows, self.n_cols, self.runs, tuple(labels),
                        self.removed_rows, tuple(sinusoids))

    def points(self) -> np.ndarray:
        """(n, 2) array of (row, run center) pairs."""
        if not self.runs:
            return np.empty((0, 2))
        return np.array([[r.row, r.center] for r in self.runs])


@dataclass(frozen=True)
class DefectRecord:
    """Ground-truth injected defect."""

    id: int
    shape: str  # "circle" | "square"
    center: tuple[float, float]
    radius: float  # circle radius or square half-side
    intensity_mean: float
    intensity_sigma: float

    @property
    def area(self) -> float:
        if self.shape == "circle":
            return math.pi * self.radius ** 2
        return (2.0 * self.radius) ** 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["center"] = list(self.center)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DefectRecord":
        return cls(id=int(d["id"]), shape=d["shape"],
                   center=(float(d["center"][0]), float(d["center"][1])),
                   radius=float(d["radius"]),
                   intensity_mean=float(d["intensity_mean"]),
                   intensity_sigma=float(d["intensity_sigma"]))


@dataclass(frozen=True)
class DefectEstimate:
    """Estimated defect position and size, from one localization method."""

    center: tuple[float, float]
    area: float
    method: str  # "circlebox" | "overlapbox"
    radius: float | None = None
    extents: tuple[float, float] | None = None

    def __post_init__(self):
        if self.area <= 0:
            raise ValidationError(f"estimate area must be > 0, got {self.area}")
        if self.method == "circlebox" and (self.radius is None or self.radius <= 0):
            raise ValidationError("circlebox estimate needs radius > 0")

    def to_dict(self) -> dict:
        d = {"center": list(self.center), "area": self.area, "method": self.method}
        if self.radius is not None:
            d["radius"] = self.radius
        if self.extents is not None:
            d["extents"] = list(self.extents)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DefectEstimate":
        return cls(center=(float(d["center"][0]), float(d["center"][1])),
                   area=float(d["area"]), method=d["method"],
                   radius=float(d["radius"]) if "radius" in d else None,
                   extents=tuple(d["extents"]) if "extents" in d else None)


def records_to_json(records, path) -> None:
    with open(path, "w") as f:
        json.dump([r.to_dict() for r in records], f, indent=1, sort_keys=True)


def records_from_json(path) -> list[DefectRecord]:
    with open(path) as f:
        return [DefectRecord.from_dict(d) for d in json.load(f)]


def estimates_to_json(estimates, path) -> None:
    with open(path, "w") as f:
        json.dump([e.to_dict() for e in estimates], f, indent=1, sort_keys=True)


def estimates_from_json(path) -> list[DefectEstimate]:
    with open(path) as f:
        return [DefectEstimate.from_dict(d) for d in json.load(f)]


# ---------------------------------------------------------------------------
# SGR1 container
#
# bytes 0-3   magic "SGR1"
# byte  4     dtype: 0 = float32, 1 = uint8
# byte  5     reserved, 0
# bytes 6-7   version, little-endian u16, = 1
# bytes 8-11  rows, LE u32
# bytes 12-15 cols, LE u32
# then the row-major payload, little-endian.
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sBBHII")


def write_raster(r: np.ndarray, path) -> None:
    """Write a 2D array to the SGR1 container (float32 or uint8 payload)."""
    r = np.asarray(r)
    if r.ndim != 2:
        raise ValidationError(f"raster must be 2D, got shape {r.shape}")
    if r.dtype == np.uint8:
        code = 1
        payload = np.ascontiguousarray(r)
    else:
        if not np.all(np.isfinite(r)):
            raise ValidationError("raster values must be finite")
        code = 0
        payload = np.ascontiguousarray(r, dtype="<f4")
    rows, cols = r.shape
    header = _HEADER.pack(SGR_MAGIC, code, 0, SGR_VERSION, rows, cols)
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload.tobytes())


def read_raster(path) -> np.ndarray:
    """Read an SGR1 file back into a numpy array (byte-exact round trip)."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"truncated header: {len(raw)} bytes")
    magic, code, reserved, version, rows, cols = _HEADER.unpack_from(raw)
    if magic != SGR_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if code not in _SGR_DTYPES:
        raise FormatError(f"bad dtype code {code}")
    if version != SGR_VERSION:
        raise FormatError(f"bad version {version}")
    dt = _SGR_DTYPES[code]
    expected = rows * cols * dt.itemsize
    payload = raw[_HEADER.size:]
    if len(payload) < expected:
        raise FormatError(
            f"truncated payload: got {len(payload)} bytes, need {expected}")
    if len(payload) > expected:
        raise FormatError(
            f"oversized payload: got {len(payload)} bytes, need {expected}")
    arr = np.frombuffer(payload, dtype=dt).reshape(rows, cols)
    if code == 0:
        arr = arr.astype(np.float32)  # native byte order, writable
    else:
        arr = arr.copy()
    return arr


def validate_mask(mask: np.ndarray, what: str = "mask") -> np.ndarray:
    """Check a raster is binary {0,1}; returns it as uint8."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValidationError(f"{what} must be 2D, got shape {mask.shape}")
    bad = (mask != 0) & (mask != 1)
    if bad.any():
        idx = np.argwhere(bad)[0]
        raise ValidationError(
            f"{what} is not binary: value {mask[idx[0], idx[1]]!r} "
            f"at (row {idx[0]}, col {idx[1]})")
    return mask.astype(np.uint8)


def write_pgm(r: np.ndarray, path, vmin: float, vmax: float) -> None:
    """Render a raster to binary (P5) PGM, affinely mapping [vmin, vmax] to 0..255.

    Values outside the range are clamped; rounding is half-up so the exact
    midpoint lands on 128.
    """
    if not (vmin < vmax):
        raise ValidationError(f"need vmin < vmax, got {vmin} >= {vmax}")
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 2:
        raise ValidationError(f"raster must be 2D, got shape {r.shape}")
    scaled = (r - vmin) * (255.0 / (vmax - vmin))
    pix = np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)
    rows, cols = pix.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (cols, rows))
        f.write(pix.tobytes())
