"""Sinogram defect segmentation trainer.

Trains a small U-Net on datasets produced by the sinogram simulation
pipeline (manifest JSON + SGR1 rasters) and exports binary masks in the
same container format, so the localization pipeline can ingest them.
"""

from .config import ConfigError, InferenceError, TrainConfig
from .model import UNet

__all__ = ["ConfigError", "InferenceError", "TrainConfig", "UNet"]

__version__ = "0.1.0"
