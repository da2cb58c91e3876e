"""Project configuration: one JSON file wiring resolutions, latent sizes,
training hyperparameters and artifact directories."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .nn import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class ProjectConfig:
    world_scale: float = 1.0
    resolution: int = 64
    latent_n: int = 128
    pca_n: int = 10
    case1_k: int = 16
    y0: float = 0.2
    collision_margin: float = 0.003
    body_config: str | None = None      # JSON path; None uses the built-in body
    dataset_dir: str = "data"
    model_dir: str = "models"
    runs_log: str = "runs.log"
    paramnet_base: int = 8
    encoder_sees_mask: bool = True  # feed bi-distance mask channels to encoders
    animnet_latent: int = 96
    animnet_base: int = 8
    infer_points: int = 1024
    infer_widths: tuple = (3, 64, 128, 256)
    infer_fuse_hidden: int = 256
    paramnet: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=200, lr=0.05))
    animnet: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=300, lr=0.05))
    infernet: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=300, lr=0.02))

    @property
    def d_max(self) -> float:
        return self.resolution / 4

    def to_dict(self) -> dict:
        d = asdict(self)
        d["infer_widths"] = list(self.infer_widths)
        return d

    @staticmethod
    def from_dict(d: dict) -> "ProjectConfig":
        d = dict(d)
        for key in ("paramnet", "animnet", "infernet"):
            if key in d and isinstance(d[key], dict):
                d[key] = TrainConfig(**d[key])
        if "infer_widths" in d:
            d["infer_widths"] = tuple(d["infer_widths"])
        return ProjectConfig(**d)

    def hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def load_config(path) -> ProjectConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(p) as fh:
        return ProjectConfig.from_dict(json.load(fh))


def save_config(config: ProjectConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
