"""Manifest-backed dataset of (sinogram, union mask) pairs."""

import json
import os

import numpy as np
import torch
from torch.utils.data import Dataset

from .config import ConfigError
from .sgr import read_sgr


def load_manifest(path) -> tuple[dict, str]:
    with open(path) as f:
        manifest = json.load(f)
    return manifest, os.path.dirname(os.path.abspath(path))


def split_samples(manifest: dict, split: str) -> list[dict]:
    if split == "all":
        return list(manifest["samples"])
    return [s for s in manifest["samples"] if s["split"] == split]


class SinogramDataset(Dataset):
    def __init__(self, samples: list[dict], root: str,
                 normalize: str = "per_sample_max"):
        if not samples:
            raise ConfigError("empty sample list")
        for s in samples:
            if "mask" not in s["paths"]:
                raise ConfigError(f"sample {s['id']} has no mask path")
        self.samples = samples
        self.root = root
        self.normalize = normalize

    def __len__(self):
        return len(self.samples)

    def load_sino(self, sample) -> np.ndarray:
        sino = read_sgr(os.path.join(self.root, sample["paths"]["sino"]))
        sino = sino.astype(np.float32)
        if self.normalize == "per_sample_max":
            peak = float(sino.max())
            if peak > 0:
                sino = sino / peak
        return sino

    def __getitem__(self, i):
        s = self.samples[i]
        sino = self.load_sino(s)
        mask = read_sgr(os.path.join(self.root, s["paths"]["mask"]))
        x = torch.from_numpy(sino)[None]
        y = torch.from_numpy(mask.astype(np.float32))[None]
        return x, y

    def foreground_ratio(self) -> float:
        """background/foreground pixel ratio across the dataset."""
        fg = 0
        total = 0
        for s in self.samples:
            mask = read_sgr(os.path.join(self.root, s["paths"]["mask"]))
            fg += int(mask.sum())
            total += mask.size
        if fg == 0:
            return 1.0
        return (total - fg) / fg
