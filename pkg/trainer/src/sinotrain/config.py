import json
from dataclasses import asdict, dataclass


class ConfigError(ValueError):
    """Bad training configuration or dataset manifest."""


class InferenceError(ValueError):
    """Input incompatible with the trained model."""


@dataclass
class TrainConfig:
    """Everything the training run depends on (logged with the artifact).

    normalize and pos_weight are declared here because the source method
    leaves them open: sinograms are scaled by their per-sample maximum,
    and the loss weights foreground by the background/foreground pixel
    ratio of the training set ("auto").
    """

    manifest: str
    epochs: int = 20
    batch_size: int = 4
    lr: float = 1e-3
    base_channels: int = 32
    depth: int = 3
    threshold: float = 0.5
    seed: int = 0
    normalize: str = "per_sample_max"  # or "none"
    pos_weight: str | float = "auto"
    num_workers: int = 0
    device: str = "cpu"
    max_steps: int | None = None  # cap optimizer steps (smoke tests)

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, "
                              f"got {self.base_channels}")
        if not (0.0 < self.threshold < 1.0):
            raise ConfigError(f"threshold must be in (0,1), got {self.threshold}")
        if self.normalize not in ("per_sample_max", "none"):
            raise ConfigError(f"unknown normalize mode {self.normalize!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path) as f:
            return cls(**json.load(f))
