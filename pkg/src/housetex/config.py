"""YAML run configuration.

Recognised top-level keys::

    mesh:     wall_height, wall_thickness, door_height, window_sill, window_top,
              texture_scale, object_size
    crops:    fov, n, crop, attempts, upscale
    synth:    any SynthConfig field (steps, lr, batch_size, ...)
    gnn:      any GNNConfig field (epochs, lr, weight_decay, batch_size, ...)
    texture:  size, seamless {search, step, max_iter, tolerance}
    metrics:  unobserved_fraction, fid_weights, fid_resolution
    splits:   ratios [train, val, test]
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .graph import GNNConfig
from .mesh import MeshParams
from .synth.model import SynthConfig


@dataclass
class CropOptions:
    fov: float | None = None
    n: int = 10
    crop: int = 256
    attempts: int = 1000
    upscale: float = 3.0


@dataclass
class TextureOptions:
    size: int = 128
    seamless: dict = field(default_factory=dict)


@dataclass
class MetricOptions:
    unobserved_fraction: float = 0.6
    fid_weights: str = "fixed"
    fid_resolution: int = 299


@dataclass
class Config:
    mesh: MeshParams = field(default_factory=MeshParams)
    crops: CropOptions = field(default_factory=CropOptions)
    synth: SynthConfig = field(default_factory=SynthConfig)
    gnn: GNNConfig = field(default_factory=GNNConfig)
    texture: TextureOptions = field(default_factory=TextureOptions)
    metrics: MetricOptions = field(default_factory=MetricOptions)
    splits: tuple = (0.6, 0.2, 0.2)


_SECTIONS = {
    "mesh": MeshParams,
    "crops": CropOptions,
    "synth": SynthConfig,
    "gnn": GNNConfig,
    "texture": TextureOptions,
    "metrics": MetricOptions,
}
_SEAMLESS_KEYS = {"search", "step", "max_iter", "tolerance"}


def _section(name, cls, values):
    if not isinstance(values, dict):
        raise ValueError(f"config section {name!r} must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ValueError(f"unknown keys in config section {name!r}: {', '.join(unknown)}")
    if cls is SynthConfig:
        return SynthConfig.from_dict(values)
    return cls(**values)


def config_from_dict(data: dict | None) -> Config:
    data = data or {}
    if not isinstance(data, dict):
        raise ValueError("config file must contain a mapping")
    unknown = sorted(set(data) - set(_SECTIONS) - {"splits"})
    if unknown:
        raise ValueError(f"unknown config sections: {', '.join(unknown)}")
    cfg = Config()
    for name, cls in _SECTIONS.items():
        if name in data:
            setattr(cfg, name, _section(name, cls, data[name]))
    bad = sorted(set(cfg.texture.seamless) - _SEAMLESS_KEYS)
    if bad:
        raise ValueError(f"unknown keys in texture.seamless: {', '.join(bad)}")
    if "splits" in data:
        ratios = data["splits"].get("ratios") if isinstance(data["splits"], dict) else None
        if not isinstance(ratios, list) or len(ratios) != 3:
            raise ValueError("splits.ratios must be a list of three numbers")
        cfg.splits = tuple(float(r) for r in ratios)
    return cfg


def load_config(path=None) -> Config:
    if path is None:
        return Config()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    return config_from_dict(yaml.safe_load(path.read_text()))
