"""Embedding-based texture synthesiser: encoder, noise-field decoder and substance branch."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from ..data import SurfaceCrop
from ..errors import ModelError
from .color import hsv_to_rgb, hsv_to_rgb_np, rgb_to_hsv, separate_color

SUBSTANCES = ("wood", "plaster", "carpet", "tile")
PROVENANCES = ("observed", "propagated", "baseline-crop", "baseline-retrieve", "baseline-naive")
SUPPORTED_SIZES = (128, 256)
LATENT_DIM = 8
EMBEDDING_DIM = LATENT_DIM + 3


@dataclass(frozen=True, eq=False)
class TextureEmbedding:
    """8-d pattern latent plus the 3-d median colour in RGB."""

    latent: np.ndarray
    color: np.ndarray

    def __post_init__(self):
        lat = np.asarray(self.latent, dtype=np.float64).reshape(-1)
        col = np.asarray(self.color, dtype=np.float64).reshape(-1)
        if lat.shape != (LATENT_DIM,) or col.shape != (3,):
            raise ValueError(f"embedding must be {LATENT_DIM}+3 values, got {lat.shape}+{col.shape}")
        if not (np.isfinite(lat).all() and np.isfinite(col).all()):
            raise ValueError("embedding contains non-finite values")
        object.__setattr__(self, "latent", lat)
        object.__setattr__(self, "color", col)

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.latent, self.color])

    @classmethod
    def from_vector(cls, v) -> "TextureEmbedding":
        v = np.asarray(v, dtype=np.float64).reshape(-1)
        if v.shape != (EMBEDDING_DIM,):
            raise ValueError(f"expected {EMBEDDING_DIM} values, got {v.shape}")
        return cls(v[:LATENT_DIM], v[LATENT_DIM:])

    def __eq__(self, other):
        return isinstance(other, TextureEmbedding) and np.array_equal(self.vector, other.vector)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class TextureSample:
    image: np.ndarray
    provenance: str
    seamless: bool = False
    substance: str | None = None
    seam_warning: bool = False

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        img = np.clip(np.asarray(self.image, dtype=np.float32), 0.0, 1.0)
        img.setflags(write=False)
        object.__setattr__(self, "image", img)


@dataclass
class SynthConfig:
    latent_dim: int = LATENT_DIM
    noise_periods: tuple = (2, 4, 8, 16)
    noise_channels: int = 4
    hidden: int = 32
    hsv_separation: bool = True
    substance_branch: bool = True
    lr: float = 2e-4
    batch_size: int = 8
    steps: int = 2000
    crop: int = 128
    vgg_weight: float = 1.0
    ce_weight: float = 0.1
    perceptual_width: float = 0.25
    perceptual_weights: str = "fixed"
    seed: int = 0
    log_every: int = 50

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        if "noise_periods" in d:
            d["noise_periods"] = tuple(d["noise_periods"])
        return cls(**d)


class Encoder(nn.Module):
    def __init__(self, latent_dim=LATENT_DIM, width=32):
        super().__init__()
        chans = [3, width // 2, width, 2 * width, 2 * width, 2 * width]
        layers = []
        for a, b in zip(chans, chans[1:]):
            layers += [nn.Conv2d(a, b, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
        self.conv = nn.Sequential(*layers)
        self.head = nn.Linear(2 * chans[-1], latent_dim)
        # variance-preserving init so small colour offsets still reach the latent
        for m in self.conv:
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, a=0.2, nonlinearity="leaky_relu")
                nn.init.zeros_(m.bias)

    def forward(self, x):
        f = self.conv(x)
        # mean and spread of the final features; the spread carries texture contrast
        return self.head(torch.cat([f.mean(dim=(2, 3)), f.std(dim=(2, 3))], dim=1))


def noise_field(size: int, periods, channels: int, generator: torch.Generator, batch: int = 1) -> torch.Tensor:
    """Multi-octave lattice noise, periodic over ``size`` so decoded textures tile.

    One octave per lattice period; values are smoothstep-interpolated
    Gaussian lattice samples. Returns (batch, len(periods) * channels, size, size).
    """
    octaves = []
    coords = torch.arange(size, dtype=torch.float32)
    for p in periods:
        g = size // p
        lattice = torch.randn(batch, channels, g, g, generator=generator)
        # lattice points on pixel centres, so every neighbour pair (the wrapped one included) has the same statistics
        x = coords / p
        i0 = torch.floor(x).long()
        t = x - i0
        t = t * t * (3 - 2 * t)
        i0m, i1m = i0 % g, (i0 + 1) % g
        rows = lattice[:, :, i0m] * (1 - t)[None, None, :, None] + lattice[:, :, i1m] * t[None, None, :, None]
        field_ = rows[..., i0m] * (1 - t) + rows[..., i1m] * t
        octaves.append(field_)
    return torch.cat(octaves, dim=1)


class NoiseDecoder(nn.Module):
    """Per-pixel MLP over (latent, multi-octave noise) producing a 3-channel offset image."""

    def __init__(self, latent_dim, noise_dim, hidden):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(latent_dim + noise_dim, hidden),
            nn.LeakyReLU(0.2),
            nn.Linear(hidden, hidden),
            nn.LeakyReLU(0.2),
            nn.Linear(hidden, hidden),
            nn.LeakyReLU(0.2),
            nn.Linear(hidden, 3),
        )

    def forward(self, latent, noise):
        b, _, h, w = noise.shape
        z = latent[:, None, None, :].expand(b, h, w, latent.shape[1])
        out = self.net(torch.cat([z, noise.permute(0, 2, 3, 1)], dim=-1))
        return out.permute(0, 3, 1, 2)


class SynthModel(nn.Module):
    def __init__(self, config: SynthConfig | None = None):
        super().__init__()
        self.config = config or SynthConfig()
        c = self.config
        self.encoder = Encoder(c.latent_dim)
        self.decoder = NoiseDecoder(c.latent_dim, len(c.noise_periods) * c.noise_channels, c.hidden)
        self.substance_head = (
            nn.Sequential(nn.Linear(c.latent_dim, 32), nn.ReLU(), nn.Linear(32, len(SUBSTANCES)))
            if c.substance_branch
            else None
        )
        self.trained = False
        self.dataset_hash = ""
        self.history: list[dict] = []

    # -- tensors -------------------------------------------------------------

    def encoder_input(self, image: np.ndarray):
        """(encoder input HxWx3, median HSV or None) for one RGB crop."""
        if self.config.hsv_separation:
            median, delta = separate_color(image)
            return delta.astype(np.float32), median
        return np.asarray(image, dtype=np.float32), None

    def decode_tensor(self, latent: torch.Tensor, median_hsv: torch.Tensor | None, noise: torch.Tensor) -> torch.Tensor:
        """Differentiable decode to RGB (B, 3, H, W), clamped to [0, 1]."""
        raw = self.decoder(latent, noise)
        if self.config.hsv_separation:
            scale = torch.tensor([0.5, 1.0, 1.0]).view(1, 3, 1, 1)
            dhsv = torch.tanh(raw) * scale
            rgb = hsv_to_rgb(dhsv + median_hsv[:, :, None, None])
        else:
            rgb = torch.sigmoid(raw)
        return rgb.clamp(0.0, 1.0)

    def make_noise(self, size, seed=None, batch=1, generator=None):
        if generator is None:
            generator = torch.Generator().manual_seed(int(seed) & 0x7FFFFFFFFFFFFFFF)
        return noise_field(size, self.config.noise_periods, self.config.noise_channels, generator, batch)

    # -- public ops ----------------------------------------------------------

    def _require_trained(self):
        if not self.trained:
            raise ModelError("synthesis model is untrained; train it or load a checkpoint")

    def encode(self, crop) -> TextureEmbedding:
        self._require_trained()
        image = crop.image if isinstance(crop, SurfaceCrop) else np.asarray(crop, dtype=np.float32)
        enc_in, _ = self.encoder_input(image)
        hsv = rgb_to_hsv(image)
        median = separate_color(image)[0] if self.config.hsv_separation else np.array(
            [np.median(hsv[..., 0]), np.median(hsv[..., 1]), np.median(hsv[..., 2])]
        )
        color = hsv_to_rgb_np(median)
        with torch.no_grad():
            x = torch.from_numpy(np.ascontiguousarray(enc_in.transpose(2, 0, 1)))[None]
            latent = self.encoder(x)[0].double().numpy()
        return TextureEmbedding(latent, color)

    def substance_logits(self, latent) -> np.ndarray:
        if self.substance_head is None:
            raise ModelError("model has no substance branch")
        lat = latent.latent if isinstance(latent, TextureEmbedding) else np.asarray(latent, dtype=np.float64)
        with torch.no_grad():
            return self.substance_head(torch.as_tensor(lat, dtype=torch.float32)[None])[0].double().numpy()

    def decode(self, embedding: TextureEmbedding, size: int = 128, seed: int = 0) -> TextureSample:
        self._require_trained()
        if size not in SUPPORTED_SIZES:
            raise ValueError(f"unsupported texture size {size}; expected one of {SUPPORTED_SIZES}")
        latent = torch.as_tensor(embedding.latent, dtype=torch.float32)[None]
        median = torch.as_tensor(rgb_to_hsv(embedding.color), dtype=torch.float32)[None]
        noise = self.make_noise(size, seed)
        with torch.no_grad():
            rgb = self.decode_tensor(latent, median, noise)[0].numpy().transpose(1, 2, 0)
        substance = None
        if self.substance_head is not None:
            substance = SUBSTANCES[int(np.argmax(self.substance_logits(embedding)))]
        return TextureSample(rgb, provenance="observed", seamless=False, substance=substance)

    # -- checkpoints ---------------------------------------------------------

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        torch.save(
            {
                "kind": "synth",
                "config": asdict(self.config),
                "state_dict": self.state_dict(),
                "trained": self.trained,
                "dataset_hash": self.dataset_hash,
                "history": self.history,
            },
            path,
        )

    @classmethod
    def load(cls, path) -> "SynthModel":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        blob = torch.load(path, map_location="cpu", weights_only=False)
        if blob.get("kind") != "synth":
            raise ModelError(f"{path} is not a synthesis checkpoint")
        model = cls(SynthConfig.from_dict(blob["config"]))
        model.load_state_dict(blob["state_dict"])
        model.trained = blob["trained"]
        model.dataset_hash = blob["dataset_hash"]
        model.history = blob["history"]
        model.eval()
        return model

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for k, v in self.state_dict().items():
            h.update(k.encode())
            h.update(v.numpy().tobytes())
        return h.hexdigest()[:16]


def encode(crop, model: SynthModel) -> TextureEmbedding:
    return model.encode(crop)


def decode(embedding: TextureEmbedding, size: int, seed: int, model: SynthModel) -> TextureSample:
    return model.decode(embedding, size=size, seed=seed)


def substance_logits(latent, model: SynthModel) -> np.ndarray:
    return model.substance_logits(latent)
