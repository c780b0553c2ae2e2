"""Defect localization for 2D parallel-beam CT, directly in sinogram space.

Simulate sinograms of phantoms with injected high-attenuation defects,
segment defect pixels in the sinogram, separate defects by per-row
skeletonization plus a sinusoid Hough fit, and estimate each defect's
center and size without reconstructing the image.
"""

from .core import (DefectEstimate, DefectRecord, Run, ScanGeometry,
                   SinusoidParams, Skeleton, read_raster, write_pgm,
                   write_raster)
from .projector import point_trace, radon

__all__ = [
    "DefectEstimate", "DefectRecord", "Run", "ScanGeometry",
    "SinusoidParams", "Skeleton", "read_raster", "write_pgm", "write_raster",
    "point_trace", "radon",
]

__version__ = "0.1.0"
