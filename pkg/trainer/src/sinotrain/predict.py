"""Batch inference: sinogram files in, binary SGR1 masks out."""

from __future__ import annotations

import os

import numpy as np
import torch

from .config import InferenceError, TrainConfig
from .sgr import read_sgr, write_sgr
from .model import UNet


def load_artifact(artifact_dir, device="cpu"):
    path = os.path.join(artifact_dir, "model.pt")
    blob = torch.load(path, map_location=device, weights_only=False)
    cfg = TrainConfig(**blob["config"])
    model = UNet(cfg.base_channels, cfg.depth)
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model.to(device), cfg, tuple(blob["input_shape"])


def mask_name(input_path) -> str:
    base, _ext = os.path.splitext(input_path)
    return base + ".mask.sgr"


def predict(artifact_dir, input_paths, out_dir, rel_root=None,
            device="cpu") -> list[str]:
    """Segment each input sinogram; returns the written mask paths.

    Output names mirror the inputs with a .mask.sgr suffix. When rel_root
    is given, each input's path relative to it is reproduced under out_dir
    (so manifest-driven batches keep their per-sample directory layout);
    otherwise outputs land flat in out_dir under the input's basename.
    """
    model, cfg, trained_shape = load_artifact(artifact_dir, device)
    written = []
    for path in input_paths:
        sino = read_sgr(path).astype(np.float32)
        if sino.shape != tuple(trained_shape):
            raise InferenceError(
                f"{path}: shape {sino.shape} does not match training "
                f"resolution {tuple(trained_shape)}")
        if cfg.normalize == "per_sample_max" and sino.max() > 0:
            sino = sino / float(sino.max())
        with torch.no_grad():
            logits = model(torch.from_numpy(sino)[None, None].to(device))
            prob = torch.sigmoid(logits)[0, 0].cpu().numpy()
        mask = (prob >= cfg.threshold).astype(np.uint8)
        if rel_root is not None:
            rel = os.path.relpath(path, rel_root)
            target = os.path.join(out_dir, mask_name(rel))
        else:
            target = os.path.join(out_dir, mask_name(os.path.basename(path)))
        os.makedirs(os.path.dirname(target) or ".", exist_ok=True)
        write_sgr(mask, target)
        written.append(target)
    return written
