import json
import os

import numpy as np
import pytest

from sinotrain.sgr import write_sgr


def synth_sample(rng, size=64, n_bumps=2):
    """Synthetic (sinogram, mask) pair: smooth background plus bright bands.

    Not a physical simulation; just structured data a segmenter can learn.
    """
    y, x = np.mgrid[0:size, 0:size]
    background = 2.0 + np.sin(x / 9.0) + np.cos(y / 13.0)
    mask = np.zeros((size, size), dtype=np.uint8)
    sino = background.copy()
    for _ in range(n_bumps):
        cx = rng.uniform(8, size - 8)
        amp = rng.uniform(2, size / 2 - 6)
        phase = rng.uniform(0, 2 * np.pi)
        width = rng.integers(3, 7)
        centers = size / 2 + amp * np.sin(y[:, 0] / size * np.pi + phase)
        for r in range(size):
            lo = int(max(centers[r] - width, 0))
            hi = int(min(centers[r] + width, size - 1))
            mask[r, lo:hi + 1] = 1
            sino[r, lo:hi + 1] += rng.uniform(3.0, 5.0)
    return sino.astype(np.float32), mask


def build_dataset(root, n_train=3, n_val=2, size=64, seed=0):
    """Write a manifest-compatible synthetic dataset; returns manifest path."""
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n_train + n_val):
        split = "train" if i < n_train else "val"
        sid = f"s{i:03d}"
        sdir = os.path.join(root, "samples", sid)
        os.makedirs(sdir, exist_ok=True)
        sino, mask = synth_sample(rng, size=size)
        write_sgr(sino, os.path.join(sdir, "sino.sgr"))
        write_sgr(mask, os.path.join(sdir, "mask.sgr"))
        samples.append({
            "id": sid, "seed": seed, "split": split,
            "paths": {
                "sino": f"samples/{sid}/sino.sgr",
                "mask": f"samples/{sid}/mask.sgr",
                "clean_sino": f"samples/{sid}/sino.sgr",
                "instance_masks": [],
                "records": "",
            },
        })
    manifest = {"spec": {"synthetic": True, "image_size": size},
                "samples": samples}
    path = os.path.join(root, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f)
    return path


@pytest.fixture()
def tiny_dataset(tmp_path):
    return build_dataset(str(tmp_path), n_train=3, n_val=2, size=64)
