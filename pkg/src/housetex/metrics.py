"""Texture quality metrics (COLOR, FREQ, SUBS, FID, TILE) and the three-column evaluation report."""

from __future__ import annotations

import collections
import csv
import functools
import hashlib
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ModelError
from .synth.model import SUBSTANCES
from .synth.perceptual import perceptual_net, to_tensor

log = logging.getLogger(__name__)

METRICS = ("COLOR", "FREQ", "SUBS", "FID", "TILE")
COLUMNS = ("observed", "unobserved", "all")
HUE_BINS, SAT_BINS, LIGHT_BINS = 10, 3, 3
FREQ_BINS = 64


def _as_rgb(image) -> np.ndarray:
    arr = np.asarray(image)
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float64) / 255.0
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=-1)
    if arr.ndim != 3 or arr.shape[-1] != 3:
        raise ValueError(f"expected an HxWx3 image, got shape {arr.shape}")
    return arr


def to_gray(image) -> np.ndarray:
    """ITU-R 601 luma of an RGB image in [0, 1]."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    return _as_rgb(arr) @ np.array([0.299, 0.587, 0.114])


# ---------------------------------------------------------------- COLOR


def rgb_to_hsl(rgb) -> np.ndarray:
    """Vectorised ``colorsys.rgb_to_hls`` returning channels in (H, S, L) order."""
    rgb = _as_rgb(rgb)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc, minc = rgb.max(-1), rgb.min(-1)
    light = (maxc + minc) / 2.0
    delta = maxc - minc
    with np.errstate(divide="ignore", invalid="ignore"):
        sat = np.where(light <= 0.5, delta / (maxc + minc), delta / (2.0 - maxc - minc))
        rc, gc, bc = (maxc - r) / delta, (maxc - g) / delta, (maxc - b) / delta
    hue = np.where(r == maxc, bc - gc, np.where(g == maxc, 2.0 + rc - bc, 4.0 + gc - rc))
    gray = delta <= 0
    hue = np.where(gray, 0.0, np.mod(hue / 6.0, 1.0))
    sat = np.where(gray, 0.0, sat)
    return np.stack([hue, sat, light], axis=-1)


def hsl_histograms(image) -> list[np.ndarray]:
    """Mass-1 histograms of hue (10 bins), saturation (3) and lightness (3)."""
    hsl = rgb_to_hsl(image).reshape(-1, 3)
    hists = []
    for c, bins in enumerate((HUE_BINS, SAT_BINS, LIGHT_BINS)):
        idx = np.clip(np.floor(hsl[:, c] * bins).astype(int), 0, bins - 1)
        h = np.bincount(idx, minlength=bins).astype(np.float64)
        hists.append(h / h.sum())
    return hists


def metric_color(tex, ref) -> float:
    """Summed L1 distance of per-channel HSL histograms, divided by 6 so the result lies in [0, 1]."""
    return float(sum(np.abs(a - b).sum() for a, b in zip(hsl_histograms(tex), hsl_histograms(ref))) / 6.0)


# ---------------------------------------------------------------- FREQ


def periodic_component(u: np.ndarray) -> np.ndarray:
    """Periodic part of the periodic-plus-smooth decomposition of a 2-d image.

    The smooth part solves a Poisson problem whose source is the jump across
    the wrapped border; its mean is set to zero so ``p`` keeps the mean of ``u``.
    """
    u = np.asarray(u, dtype=np.float64)
    m, n = u.shape
    v = np.zeros_like(u)
    v[0, :] += u[-1, :] - u[0, :]
    v[-1, :] += u[0, :] - u[-1, :]
    v[:, 0] += u[:, -1] - u[:, 0]
    v[:, -1] += u[:, 0] - u[:, -1]
    cos_m = np.cos(2.0 * np.pi * np.fft.fftfreq(m))
    cos_n = np.cos(2.0 * np.pi * np.fft.fftfreq(n))
    denom = 2.0 * (cos_m[:, None] + cos_n[None, :] - 2.0)
    denom[0, 0] = 1.0
    s_hat = np.fft.fft2(v) / denom
    s_hat[0, 0] = 0.0
    return u - np.real(np.fft.ifft2(s_hat))


def radial_profile(amplitude: np.ndarray, bins: int = FREQ_BINS) -> np.ndarray:
    """Azimuthal mean of an (unshifted) 2-d spectrum in unit-width radial bins."""
    m, n = amplitude.shape
    fy = np.fft.fftfreq(m) * m
    fx = np.fft.fftfreq(n) * n
    r = np.floor(np.hypot(fy[:, None], fx[None, :])).astype(int)
    keep = r < bins
    total = np.bincount(r[keep], weights=amplitude[keep], minlength=bins)
    count = np.bincount(r[keep], minlength=bins)
    return np.divide(total, count, out=np.zeros(bins), where=count > 0)


def freq_histogram(image, bins: int = FREQ_BINS) -> np.ndarray:
    amp = np.abs(np.fft.fft2(periodic_component(to_gray(image)), norm="forward"))
    amp[0, 0] = 0.0
    return radial_profile(amp, bins)


def metric_freq(tex, ref, bins: int = FREQ_BINS) -> float:
    """Mean absolute difference of the azimuthally averaged amplitude spectra of the periodic components."""
    a, b = to_gray(tex), to_gray(ref)
    if a.shape != b.shape:
        raise ValueError(f"FREQ needs same-size images, got {a.shape} and {b.shape}")
    return float(np.abs(freq_histogram(a, bins) - freq_histogram(b, bins)).mean())


# ---------------------------------------------------------------- TILE


@functools.lru_cache(maxsize=8)
def tile_weights(shape: tuple[int, int], sigma: float) -> np.ndarray:
    """Magnitude spectrum of a unit-sum Gaussian of width ``sigma`` on the torus."""
    m, n = shape
    dy = np.minimum(np.arange(m), m - np.arange(m))
    dx = np.minimum(np.arange(n), n - np.arange(n))
    g = np.exp(-(dy[:, None] ** 2 + dx[None, :] ** 2) / (2.0 * sigma**2))
    w = np.abs(np.fft.fft2(g / g.sum()))
    w.setflags(write=False)
    return w


def metric_tile(tex, sigma: float | None = None) -> float:
    """Low-frequency energy ``||w ⊙ F{gray}||²`` with the DC term excluded; lower tiles better.

    ``sigma`` defaults to one sixth of the image side (21 px at 128 px).
    """
    gray = to_gray(tex)
    m, n = gray.shape
    if m != n:
        raise ValueError(f"TILE needs a square image, got {gray.shape}")
    sigma = m / 6.0 if sigma is None else sigma
    spec = tile_weights((m, n), float(sigma)) * np.fft.fft2(gray, norm="ortho")
    spec[0, 0] = 0.0
    return float((np.abs(spec) ** 2).sum())


# ---------------------------------------------------------------- SUBS


def texture_descriptor(images, net=None) -> torch.Tensor:
    """Per-stage channel mean and std of the frozen perceptual network, concatenated."""
    net = net or perceptual_net()
    x = torch.cat([to_tensor(im) for im in images]) if isinstance(images, (list, tuple)) else to_tensor(images)
    with torch.no_grad():
        feats = net(x)
    return torch.cat([torch.cat([f.mean(dim=(2, 3)), f.std(dim=(2, 3))], 1) for f in feats], 1)


class SubstanceClassifier(nn.Module):
    """Substance classifier: frozen perceptual-network statistics followed by a small trained MLP."""

    def __init__(self, perceptual_width: float = 0.25, perceptual_weights: str = "fixed", hidden: int = 64):
        super().__init__()
        self.perceptual_width = perceptual_width
        self.perceptual_weights = perceptual_weights
        dim = 2 * sum(f.shape[1] for f in self.net(torch.zeros(1, 3, 32, 32)))
        self.head = nn.Sequential(nn.Linear(dim, hidden), nn.ReLU(), nn.Linear(hidden, len(SUBSTANCES)))
        self.register_buffer("feat_mean", torch.zeros(dim))
        self.register_buffer("feat_std", torch.ones(dim))
        self.trained = False

    @property
    def net(self):
        return perceptual_net(self.perceptual_width, self.perceptual_weights)

    def features(self, images) -> torch.Tensor:
        return (texture_descriptor(images, self.net) - self.feat_mean) / self.feat_std

    def predict(self, images) -> list[str]:
        if not self.trained:
            raise ModelError("substance classifier is untrained; train it or load a checkpoint")
        with torch.no_grad():
            logits = self.head(self.features(images))
        return [SUBSTANCES[i] for i in logits.argmax(1).tolist()]

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        torch.save(
            {
                "kind": "substance-classifier",
                "perceptual_width": self.perceptual_width,
                "perceptual_weights": self.perceptual_weights,
                "hidden": self.head[0].out_features,
                "state_dict": self.state_dict(),
                "trained": self.trained,
            },
            path,
        )

    @classmethod
    def load(cls, path) -> "SubstanceClassifier":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        blob = torch.load(path, map_location="cpu", weights_only=False)
        if blob.get("kind") != "substance-classifier":
            raise ModelError(f"{path} is not a substance classifier checkpoint")
        clf = cls(blob["perceptual_width"], blob["perceptual_weights"], blob["hidden"])
        clf.load_state_dict(blob["state_dict"])
        clf.trained = blob["trained"]
        clf.eval()
        return clf

    def fingerprint(self) -> str:
        h = hashlib.sha256(self.net.fingerprint().encode())
        for k, v in self.state_dict().items():
            h.update(k.encode())
            h.update(v.numpy().tobytes())
        return h.hexdigest()[:16]


def train_classifier(items, steps: int = 300, crops_per_item: int = 16, crop: int = 128, lr: float = 1e-3,
                     seed: int = 0, checkpoint=None) -> SubstanceClassifier:
    """Fit the classifier head on random crops of labelled stationary textures.

    :param items: sequence of ``TextureExemplar``
    :param steps: full-batch Adam steps on the precomputed crop descriptors
    """
    from .synth.train import random_crops

    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    clf = SubstanceClassifier()
    imgs, labels = [], []
    for it in items:
        c, lab = random_crops([it], crops_per_item, crop, rng)
        imgs += c
        labels += lab
    feats = torch.cat([texture_descriptor(imgs[i : i + 32], clf.net) for i in range(0, len(imgs), 32)])
    clf.feat_mean.copy_(feats.mean(0))
    clf.feat_std.copy_(feats.std(0).clamp_min(1e-6))
    x = (feats - clf.feat_mean) / clf.feat_std
    y = torch.tensor(labels)
    opt = torch.optim.Adam(clf.head.parameters(), lr=lr, weight_decay=1e-4)
    for step in range(steps):
        loss = F.cross_entropy(clf.head(x), y)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % 100 == 0:
            log.info("classifier step %d loss %.4f", step, loss.item())
    clf.trained = True
    clf.eval()
    if checkpoint is not None:
        clf.save(checkpoint)
    return clf


def metric_subs(tex, ref, classifier: SubstanceClassifier) -> int:
    """1 when the classifier assigns different substances to ``tex`` and ``ref``, else 0."""
    a, b = classifier.predict([_as_rgb(tex).astype(np.float32), _as_rgb(ref).astype(np.float32)])
    return int(a != b)


# ---------------------------------------------------------------- FID


class InceptionFeatures:
    """2048-d pooled Inception-v3 features.

    ``weights="imagenet"`` uses the torchvision checkpoint from the local
    cache. ``weights="fixed"`` draws seeded random weights and calibrates the
    batch-norm statistics on a seeded noise batch so activations stay bounded;
    distances are then comparable across runs that share the seed.
    Features are cached by image content, so repeated crops are embedded once.
    """

    def __init__(self, weights: str = "fixed", seed: int = 0, resolution: int = 299, batch_size: int = 16,
                 cache_size: int = 4096):
        from torchvision.models import inception_v3

        self.cache_size = cache_size
        self._cache = collections.OrderedDict()  # image hash -> features
        self.resolution = resolution
        self.batch_size = batch_size
        self.weights = weights
        if weights == "imagenet":
            from torchvision.models import Inception_V3_Weights

            model = inception_v3(weights=Inception_V3_Weights.IMAGENET1K_V1, aux_logits=True)
        elif weights == "fixed":
            with torch.random.fork_rng():
                torch.manual_seed(seed)
                model = inception_v3(weights=None, aux_logits=False, init_weights=True)
                calib = torch.rand(16, 3, resolution, resolution, generator=torch.Generator().manual_seed(seed + 1))
            for m in model.modules():
                if isinstance(m, nn.BatchNorm2d):
                    m.reset_running_stats()
                    m.momentum = None
            model.train()
            with torch.no_grad():
                model(calib * 2 - 1)
        else:
            raise ValueError(f"unknown inception weights {weights!r}")
        model.fc = nn.Identity()
        model.aux_logits = False
        model.AuxLogits = None
        model.eval()
        self.model = model.requires_grad_(False)

    def __call__(self, images) -> np.ndarray:
        arrays = [_as_rgb(im).astype(np.float32) for im in images]
        keys = [hashlib.sha1(a.tobytes() + str(a.shape).encode()).hexdigest() for a in arrays]
        todo = list(dict.fromkeys(k for k in keys if k not in self._cache))
        first = {k: a for k, a in zip(keys, arrays)}
        for i in range(0, len(todo), self.batch_size):
            batch = todo[i : i + self.batch_size]
            x = torch.cat([to_tensor(first[k]) for k in batch])
            x = F.interpolate(x, size=(self.resolution, self.resolution), mode="bilinear", align_corners=False)
            with torch.no_grad():
                feats = self.model(x * 2 - 1).double().numpy()
            for k, f in zip(batch, feats):
                self._cache[k] = f
                if len(self._cache) > self.cache_size:
                    self._cache.popitem(last=False)
        return np.stack([self._cache[k] for k in keys])

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for v in self.model.state_dict().values():
            h.update(v.numpy().tobytes())
        return h.hexdigest()[:16]


@functools.lru_cache(maxsize=2)
def inception_features(weights: str = "fixed", seed: int = 0) -> InceptionFeatures:
    return InceptionFeatures(weights=weights, seed=seed)


def _sqrt_psd(c: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((c + c.T) / 2)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def frechet_distance(mu1, c1, mu2, c2) -> float:
    """``|mu1 - mu2|² + tr(C1 + C2 - 2 (C1^½ C2 C1^½)^½)`` for PSD covariances."""
    s1 = _sqrt_psd(c1)
    mid = s1 @ c2 @ s1
    tr_sqrt = np.sqrt(np.clip(np.linalg.eigvalsh((mid + mid.T) / 2), 0, None)).sum()
    d = float(((mu1 - mu2) ** 2).sum() + np.trace(c1) + np.trace(c2) - 2 * tr_sqrt)
    return max(d, 0.0)


def feature_stats(features: np.ndarray):
    if len(features) < 2:
        raise ValueError(f"FID needs at least 2 images per set, got {len(features)}")
    return features.mean(0), np.cov(features, rowvar=False)


def metric_fid(textures, crops, extractor: InceptionFeatures | None = None) -> float:
    """Fréchet distance between Gaussians fitted to the pooled features of two image sets."""
    if len(textures) < 2 or len(crops) < 2:
        raise ValueError(f"FID needs at least 2 images per set, got {len(textures)} and {len(crops)}")
    extractor = extractor or inception_features()
    return frechet_distance(*feature_stats(extractor(list(textures))), *feature_stats(extractor(list(crops))))


# ---------------------------------------------------------------- evaluation


def _surface_key(key) -> str:
    house, (room, kind) = key
    return f"{house}/{room}/{kind}"


def _match_size(tex: np.ndarray, ref: np.ndarray) -> np.ndarray:
    if tex.shape[:2] == ref.shape[:2]:
        return tex
    return cv2.resize(tex.astype(np.float32), (ref.shape[1], ref.shape[0]), interpolation=cv2.INTER_AREA)


@dataclass
class MetricReport:
    """Per-column metric means plus the per-surface scores they were computed from."""

    method: str
    columns: dict = field(default_factory=dict)  # column -> {metric: float | None}
    counts: dict = field(default_factory=dict)  # column -> number of scored surfaces
    per_surface: dict = field(default_factory=dict)  # column -> {surface: {metric: value}}
    notes: dict = field(default_factory=dict)
    classifier_hash: str = ""
    extractor_hash: str = ""

    def cell(self, column: str, metric: str):
        return self.columns.get(column, {}).get(metric)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "columns": {c: {m: self.cell(c, m) for m in METRICS} for c in COLUMNS},
            "counts": {c: self.counts.get(c, 0) for c in COLUMNS},
            "per_surface": self.per_surface,
            "notes": self.notes,
            "classifier_hash": self.classifier_hash,
            "extractor_hash": self.extractor_hash,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def csv_header(self) -> list[str]:
        return ["method"] + [f"{c}_{m}" for c in COLUMNS for m in METRICS]

    def csv_row(self) -> list[str]:
        def fmt(v):
            return "n/a" if v is None else f"{v:.6g}"

        return [self.method] + [fmt(self.cell(c, m)) for c in COLUMNS for m in METRICS]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.csv_header())
        w.writerow(self.csv_row())
        return buf.getvalue()

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json())
        (out / "report.csv").write_text(self.to_csv())
        return [out / "report.json", out / "report.csv"]


def score_surfaces(textures: dict, references: dict, classifier: SubstanceClassifier) -> dict:
    """Per-surface COLOR, FREQ, SUBS and TILE.

    :param textures: surface key -> texture image (or ``TextureSample``)
    :param references: surface key -> reference crop image
    :raises KeyError: a scored surface has no reference
    """
    missing = [k for k in textures if k not in references]
    if missing:
        raise KeyError(f"no reference crop for surfaces: {', '.join(_surface_key(k) for k in missing)}")
    scores = {}
    for key, tex in textures.items():
        tex = _as_rgb(getattr(tex, "image", tex))
        ref = _as_rgb(getattr(references[key], "image", references[key]))
        tex_r = _match_size(tex, ref)
        scores[key] = {
            "COLOR": metric_color(tex, ref),
            "FREQ": metric_freq(tex_r, ref),
            "SUBS": metric_subs(tex_r, ref, classifier),
            "TILE": metric_tile(tex),
        }
    return scores


def evaluate(columns: dict, classifier: SubstanceClassifier, extractor: InceptionFeatures | None = None,
             method: str = "") -> MetricReport:
    """Build the three-column report.

    :param columns: column name -> (textures, references), each keyed by
        ``(house_id, (room_id, kind))``; a column with no textures is reported as n/a
    :param classifier: trained substance classifier for SUBS
    :param extractor: FID feature extractor; FID compares each column's
        texture set with the reference crops of the same surfaces
    """
    if not classifier.trained:
        raise ModelError("substance classifier is untrained; train it or load a checkpoint")
    report = MetricReport(method=method, classifier_hash=classifier.fingerprint())
    for col in COLUMNS:
        textures, references = columns.get(col, ({}, {}))
        report.counts[col] = len(textures)
        if not textures:
            report.columns[col] = {m: None for m in METRICS}
            report.notes[col] = "no surfaces to score"
            continue
        scores = score_surfaces(textures, references, classifier)
        keys = sorted(scores, key=_surface_key)
        cells = aggregate({k: scores[k] for k in keys})
        if len(keys) >= 2:
            extractor = extractor or inception_features()
            report.extractor_hash = report.extractor_hash or extractor.fingerprint()
            texs = [_match_size(_as_rgb(getattr(textures[k], "image", textures[k])),
                                _as_rgb(getattr(references[k], "image", references[k]))) for k in keys]
            refs = [_as_rgb(getattr(references[k], "image", references[k])) for k in keys]
            cells["FID"] = metric_fid(texs, refs, extractor)
        else:
            cells["FID"] = None
            report.notes[col] = "FID needs at least 2 surfaces"
        report.columns[col] = cells
        report.per_surface[col] = {_surface_key(k): scores[k] for k in keys}
    return report


def aggregate(per_surface: dict) -> dict:
    """Arithmetic mean per metric over a ``{surface: {metric: value}}`` map."""
    if not per_surface:
        return {}
    metrics = next(iter(per_surface.values())).keys()
    return {m: float(np.mean([v[m] for v in per_surface.values()])) for m in metrics}
