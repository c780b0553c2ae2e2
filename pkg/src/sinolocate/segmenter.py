"""Binary defect-mask producers: oracle, classical threshold, degradation, ingestion.

The instance stage downstream only needs *a* binary sinogram mask; these
strategies let the pipeline run with ground-truth-grade masks, a classical
nominal-part baseline, simulated imperfect masks, or masks produced
externally (e.g. by the neural trainer) and loaded from disk.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .core import ValidationError, read_raster, validate_mask
from .phantomgen import default_eps


def oracle_segment(clean_sino: np.ndarray, defected_sino: np.ndarray,
                   eps: float | None = None) -> np.ndarray:
    """Ground-truth mask rule: 1 where defected exceeds clean by more than eps.

    With the default eps this is bit-identical to the stored dataset labels.
    """
    if clean_sino.shape != defected_sino.shape:
        raise ValidationError(
            f"sinogram dims differ: {clean_sino.shape} vs {defected_sino.shape}")
    if eps is None:
        eps = default_eps(defected_sino)
    return ((defected_sino - clean_sino) > eps).astype(np.uint8)


def degrade_mask(mask: np.ndarray, p_fn: float, p_fp: float, seed) -> np.ndarray:
    """Simulate imperfect segmentation output.

    Each foreground pixel is dropped with probability p_fn; background
    pixels inside a 3-bin dilation band around the foreground are switched
    on with probability p_fp (real segmentation errors hug the boundary,
    unlike uniform speckle).
    """
    if not (0.0 <= p_fn <= 1.0 and 0.0 <= p_fp <= 1.0):
        raise ValidationError(f"probabilities must be in [0,1], "
                              f"got p_fn={p_fn} p_fp={p_fp}")
    mask = validate_mask(mask)
    rng = np.random.default_rng(seed)
    out = mask.copy()
    fg = mask == 1
    if p_fn > 0.0 and fg.any():
        drop = rng.random(int(fg.sum())) < p_fn
        coords = np.argwhere(fg)
        hit = coords[drop]
        out[hit[:, 0], hit[:, 1]] = 0
    if p_fp > 0.0 and fg.any():
        band = ndimage.binary_dilation(fg, iterations=3) & ~fg
        add = rng.random(int(band.sum())) < p_fp
        coords = np.argwhere(band)
        hit = coords[add]
        out[hit[:, 0], hit[:, 1]] = 1
    return out


def threshold_segment(defected_sino: np.ndarray, reference_sino: np.ndarray,
                      k: float = 5.0) -> np.ndarray:
    """Classical baseline: threshold the difference to a nominal part at k sigma.

    sigma is estimated from the negative part of the difference (pure noise,
    since defects only add attenuation). On noiseless input that estimate
    degenerates, so sigma falls back to 2e-4 * max(diff), putting the
    default k=5 threshold at the same order as the oracle eps rule.
    """
    if defected_sino.shape != reference_sino.shape:
        raise ValidationError(
            f"sinogram dims differ: {defected_sino.shape} vs {reference_sino.shape}")
    if k <= 0:
        raise ValidationError(f"k must be > 0, got {k}")
    diff = defected_sino.astype(np.float64) - reference_sino
    neg = diff[diff < 0.0]
    sigma = float(neg.std()) if neg.size >= 16 else 0.0
    floor = 2e-4 * float(diff.max()) if diff.max() > 0 else 0.0
    sigma = max(sigma, floor)
    return (diff > k * sigma).astype(np.uint8)


def load_mask(path) -> np.ndarray:
    """Read an SGR1 mask file and validate it is uint8 with values {0,1}."""
    arr = read_raster(path)
    if arr.dtype != np.uint8:
        raise ValidationError(
            f"mask file {path} has dtype {arr.dtype}, expected uint8")
    return validate_mask(arr, what=f"mask file {path}")
