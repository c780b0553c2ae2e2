"""Training loop: Adam on weighted BCE, per-epoch validation, best-IoU checkpoint.

The artifact directory holds model.pt (best validation IoU), config.json,
and train_log.jsonl with one line per epoch. Determinism: seeds are set
for torch and numpy; remaining backend nondeterminism (threaded reductions
inside torch kernels) is documented rather than fought.
"""

from __future__ import annotations

import json
import os

import numpy as np
import torch
from torch.utils.data import DataLoader

from .config import ConfigError, TrainConfig
from .data import SinogramDataset, load_manifest, split_samples
from .metrics import pixel_metrics
from .model import UNet


def evaluate(model, loader, threshold, device) -> dict:
    model.eval()
    sums = {"iou": 0.0, "precision": 0.0, "recall": 0.0, "f1": 0.0}
    n = 0
    with torch.no_grad():
        for x, y in loader:
            logits = model(x.to(device))
            pred = (torch.sigmoid(logits) >= threshold).cpu().numpy()
            gt = y.numpy()
            for b in range(pred.shape[0]):
                m = pixel_metrics(pred[b, 0], gt[b, 0])
                for k in sums:
                    sums[k] += m[k]
                n += 1
    return {k: v / max(n, 1) for k, v in sums.items()}


def train(cfg: TrainConfig, out_dir) -> str:
    """Run the configured training; returns the artifact directory."""
    torch.manual_seed(cfg.seed)
    np.random.seed(cfg.seed % (2 ** 32))
    device = torch.device(cfg.device)

    manifest, root = load_manifest(cfg.manifest)
    train_samples = split_samples(manifest, "train")
    val_samples = split_samples(manifest, "val") or split_samples(manifest, "test")
    if not train_samples:
        raise ConfigError("manifest has no training samples")
    train_ds = SinogramDataset(train_samples, root, cfg.normalize)
    val_ds = (SinogramDataset(val_samples, root, cfg.normalize)
              if val_samples else None)

    if cfg.pos_weight == "auto":
        pos_weight = torch.tensor(train_ds.foreground_ratio(), dtype=torch.float32)
    else:
        pos_weight = torch.tensor(float(cfg.pos_weight))
    loss_fn = torch.nn.BCEWithLogitsLoss(pos_weight=pos_weight.to(device))

    gen = torch.Generator()
    gen.manual_seed(cfg.seed)
    train_loader = DataLoader(train_ds, batch_size=cfg.batch_size, shuffle=True,
                              num_workers=cfg.num_workers, generator=gen)
    val_loader = (DataLoader(val_ds, batch_size=cfg.batch_size)
                  if val_ds else None)

    model = UNet(cfg.base_channels, cfg.depth).to(device)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)

    os.makedirs(out_dir, exist_ok=True)
    sample_shape = train_ds.load_sino(train_samples[0]).shape
    with open(os.path.join(out_dir, "config.json"), "w") as f:
        json.dump({**cfg.to_dict(), "input_shape": list(sample_shape),
                   "pos_weight": float(pos_weight)}, f, indent=1, sort_keys=True)

    log_path = os.path.join(out_dir, "train_log.jsonl")
    best_iou = -1.0
    step = 0
    with open(log_path, "w") as log:
        for epoch in range(cfg.epochs):
            model.train()
            epoch_loss = 0.0
            n_batches = 0
            for x, y in train_loader:
                opt.zero_grad()
                logits = model(x.to(device))
                loss = loss_fn(logits, y.to(device))
                loss.backward()
                opt.step()
                epoch_loss += loss.detach().item()
                n_batches += 1
                step += 1
                if cfg.max_steps and step >= cfg.max_steps:
                    break
            entry = {"epoch": epoch, "step": step,
                     "train_loss": epoch_loss / max(n_batches, 1)}
            if val_loader is not None:
                entry.update({f"val_{k}": v for k, v in
                              evaluate(model, val_loader, cfg.threshold,
                                       device).items()})
                iou = entry["val_iou"]
            else:
                entry.update({f"train_{k}": v for k, v in
                              evaluate(model, train_loader, cfg.threshold,
                                       device).items()})
                iou = entry["train_iou"]
            log.write(json.dumps(entry, sort_keys=True) + "\n")
            log.flush()
            if iou > best_iou:
                best_iou = iou
                torch.save({"state_dict": model.state_dict(),
                            "config": cfg.to_dict(),
                            "input_shape": list(sample_shape)},
                           os.path.join(out_dir, "model.pt"))
            if cfg.max_steps and step >= cfg.max_steps:
                break
    return out_dir
