"""Pick one representative crop per surface by how well the synthesiser reproduces it."""

from __future__ import annotations

import hashlib

import numpy as np
import torch

from .synth.model import SynthModel, TextureEmbedding
from .synth.perceptual import gram_distance, gram_stats, perceptual_net, to_tensor

SCORE_SEED = 0


def _image(crop) -> np.ndarray:
    return np.asarray(getattr(crop, "image", crop), dtype=np.float32)


def content_hash(crop) -> str:
    return hashlib.sha256(np.ascontiguousarray(_image(crop)).tobytes()).hexdigest()


def textureness_score(crop, model: SynthModel, seed: int = SCORE_SEED) -> float:
    """Gram-statistics distance between a crop and its own reconstruction ``D(E(crop))``.

    Lower means the crop is better represented by the embedding.
    """
    image = _image(crop)
    synth = model.decode(model.encode(image), size=image.shape[0], seed=seed)
    net = perceptual_net(model.config.perceptual_width, model.config.perceptual_weights)
    with torch.no_grad():
        d = gram_distance(gram_stats(net, to_tensor(image)), gram_stats(net, to_tensor(synth.image)))
    return float(d[0])


def canonical_order(crops) -> list[int]:
    """Indices of ``crops`` sorted by content hash (stable for equal content)."""
    hashes = [content_hash(c) for c in crops]
    return sorted(range(len(crops)), key=lambda i: (hashes[i], i))


def select_surface_embedding(crops, model: SynthModel, seed: int = SCORE_SEED):
    """Embedding of the crop with the lowest textureness score.

    Crops are ranked in canonical content-hash order, so ties go to the first
    crop in that order and the result does not depend on input order.

    :return: (embedding, chosen crop, scores in input order)
    :raises ValueError: empty crop list
    """
    crops = list(crops)
    if not crops:
        raise ValueError("no crops for this surface; route it to propagation")
    scores = [textureness_score(c, model, seed) for c in crops]
    order = canonical_order(crops)
    best = min(order, key=lambda i: scores[i])
    emb: TextureEmbedding = model.encode(_image(crops[best]))
    return emb, crops[best], scores
