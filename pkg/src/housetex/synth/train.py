"""Training loop for the synthesiser on stationary texture exemplars."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from ..errors import TrainingError
from .model import SUBSTANCES, SynthConfig, SynthModel
from .perceptual import gram_distance, gram_stats, perceptual_net

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TextureExemplar:
    image: np.ndarray  # HxWx3 float32 in [0, 1]
    substance: str
    name: str


def load_texture_dataset(root) -> list[TextureExemplar]:
    """Read ``<root>/<substance>/<name>.png`` for the four substances."""
    root = Path(root)
    items = []
    for sub in SUBSTANCES:
        for p in sorted((root / sub).glob("*.png")):
            with Image.open(p) as im:
                items.append(TextureExemplar(np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0, sub, p.stem))
    if not items:
        raise FileNotFoundError(f"no textures under {root}/<substance>/*.png")
    return items


def dataset_hash(items) -> str:
    h = hashlib.sha256()
    for it in items:
        h.update(it.substance.encode())
        h.update(it.name.encode())
        h.update(np.round(it.image * 255).astype(np.uint8).tobytes())
    return h.hexdigest()[:16]


def split_textures(items, n_val: int = 64, seed: int = 0):
    """Shuffle once and hold out ``n_val`` exemplars (452/64 for the full 516-texture set)."""
    if not 0 <= n_val <= len(items):
        raise ValueError(f"cannot hold out {n_val} of {len(items)} textures")
    perm = np.random.default_rng(seed).permutation(len(items))
    val = [items[i] for i in perm[:n_val]]
    train = [items[i] for i in perm[n_val:]]
    return train, val


def random_crops(items, batch: int, crop: int, rng: np.random.Generator):
    imgs, labels = [], []
    for _ in range(batch):
        it = items[int(rng.integers(len(items)))]
        h, w = it.image.shape[:2]
        if h < crop or w < crop:
            raise ValueError(f"texture {it.name} ({w}x{h}) is smaller than the {crop}px crop")
        y = int(rng.integers(0, h - crop + 1))
        x = int(rng.integers(0, w - crop + 1))
        imgs.append(it.image[y : y + crop, x : x + crop])
        labels.append(SUBSTANCES.index(it.substance))
    return imgs, labels


def train_synth(items, config: SynthConfig | None = None, checkpoint=None, model: SynthModel | None = None) -> SynthModel:
    """Fit encoder, decoder and substance branch on random crops of ``items``.

    Loss is ``vgg_weight * Gram-statistics loss + ce_weight * cross-entropy``.
    Deterministic for a fixed ``config.seed`` on a single thread.
    """
    config = config or SynthConfig()
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    gen = torch.Generator().manual_seed(config.seed)
    model = model or SynthModel(config)
    model.train()
    net = perceptual_net(config.perceptual_width, config.perceptual_weights)
    opt = torch.optim.Adam([p for p in model.parameters() if p.requires_grad], lr=config.lr)
    history = []
    for step in range(config.steps):
        crops, labels = random_crops(items, config.batch_size, config.crop, rng)
        enc_in, medians = zip(*(model.encoder_input(c) for c in crops))
        x = torch.from_numpy(np.stack(enc_in).transpose(0, 3, 1, 2).copy())
        target = torch.from_numpy(np.stack(crops).transpose(0, 3, 1, 2).copy())
        median = torch.from_numpy(np.stack(medians).astype(np.float32)) if config.hsv_separation else None
        noise = model.make_noise(config.crop, batch=config.batch_size, generator=gen)

        latent = model.encoder(x)
        rgb = model.decode_tensor(latent, median, noise)
        with torch.no_grad():
            target_stats = gram_stats(net, target)
        vgg = gram_distance(gram_stats(net, rgb), target_stats).mean()
        loss = config.vgg_weight * vgg
        ce = torch.zeros(())
        if model.substance_head is not None:
            ce = F.cross_entropy(model.substance_head(latent), torch.tensor(labels))
            loss = loss + config.ce_weight * ce
        if not torch.isfinite(loss):
            raise TrainingError(
                f"non-finite loss at step {step}: vgg={vgg.item()} ce={ce.item()} "
                f"latent range=({latent.min().item():.3g}, {latent.max().item():.3g})"
            )
        opt.zero_grad()
        loss.backward()
        opt.step()
        rec = {"step": step, "loss": loss.item(), "vgg": vgg.item(), "ce": ce.item()}
        history.append(rec)
        if config.log_every and step % config.log_every == 0:
            log.info("synth step %d loss %.5f vgg %.5f ce %.4f", step, rec["loss"], rec["vgg"], rec["ce"])
    model.eval()
    model.trained = True
    model.dataset_hash = dataset_hash(items)
    model.history = history
    if checkpoint is not None:
        model.save(checkpoint)
    return model


def substance_accuracy(model: SynthModel, items, crop: int = 128, per_item: int = 4, seed: int = 0) -> float:
    """Fraction of random crops whose substance branch argmax matches the label."""
    rng = np.random.default_rng(seed)
    hits = total = 0
    for it in items:
        crops, _ = random_crops([it], per_item, crop, rng)
        for c in crops:
            emb = model.encode(c)
            hits += SUBSTANCES[int(np.argmax(model.substance_logits(emb)))] == it.substance
            total += 1
    return hits / total if total else math.nan
