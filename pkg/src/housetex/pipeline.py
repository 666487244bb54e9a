"""End-to-end texturing of a house, the three baselines and the evaluation protocol."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from .crops import medoid_index
from .data import House, SurfaceCrop, SurfaceKind, simulate_unobserved
from .errors import ModelError, PipelineError
from .graph import GatedGraphNet, build_graph, propagate
from .mesh import MeshParams, SceneMesh, assign_textures, build_mesh
from .metrics import InceptionFeatures, MetricReport, SubstanceClassifier, evaluate
from .select import select_surface_embedding
from .synth.model import SynthModel, TextureEmbedding, TextureSample
from .synth.seamless import make_seamless

log = logging.getLogger(__name__)

METHODS = ("crop", "retrieve", "naive", "synth")
RETRIEVE_SIZE = 128


def sub_seed(seed: int, house_id, room_id, kind, stage: str) -> int:
    """``seed`` XOR a stable 63-bit hash of (house, room, surface, stage)."""
    key = f"{house_id}|{room_id}|{kind}|{stage}".encode()
    h = int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")
    return (int(seed) ^ h) & 0x7FFFFFFFFFFFFFFF


def _order(surface):
    return (surface[0], SurfaceKind(str(surface[1])).index)


def reference_crops(house: House) -> dict:
    """(room, kind) -> reference crop for every observed surface.

    A surface whose flagged reference was removed (e.g. with a held-out photo)
    gets the medoid of its remaining crops.
    """
    refs = {}
    for surface in sorted(house.observed_surfaces, key=_order):
        ref = house.reference_crop(surface)
        if ref is None:
            group = house.crops_for(surface)
            ref = replace(group[medoid_index([c.image for c in group])], is_reference=True)
        refs[surface] = ref
    return refs


# ---------------------------------------------------------------- candidate pools


@dataclass(frozen=True, eq=False)
class PoolCrop:
    crop: SurfaceCrop
    room_types: tuple[str, ...]


def crop_pool(houses) -> list[PoolCrop]:
    """Every crop of ``houses`` tagged with the room types of its room."""
    pool = []
    for h in houses:
        for c in h.crops:
            pool.append(PoolCrop(c, h.room(c.room_id).categories))
    return pool


def candidate_crops(house: House, surface, training_pool) -> tuple[str, list[SurfaceCrop]]:
    """First non-empty pool in the relaxation order for an unobserved surface.

    Order: same house and room type, training set and room type, then any room
    type (same house first, then training set). The surface kind always matches.
    """
    rid, kind = surface
    kind = SurfaceKind(str(kind))
    types = set(house.room(rid).categories)
    own = [PoolCrop(c, house.room(c.room_id).categories) for c in house.crops if c.kind == kind]
    train = [p for p in training_pool if p.crop.kind == kind and p.crop.house_id != house.id]
    tiers = (
        ("house-room-type", [p.crop for p in own if types & set(p.room_types)]),
        ("train-room-type", [p.crop for p in train if types & set(p.room_types)]),
        ("house-any-type", [p.crop for p in own]),
        ("train-any-type", [p.crop for p in train]),
    )
    for name, crops in tiers:
        if crops:
            return name, crops
    return "none", []


def _pick_unobserved_crop(house, surface, training_pool, seed, stage) -> SurfaceCrop:
    _, crops = candidate_crops(house, surface, training_pool)
    if not crops:
        raise PipelineError(stage, surface, LookupError(f"no {surface[1]} crop in the house or the training set"))
    rng = np.random.default_rng(sub_seed(seed, house.id, surface[0], surface[1], stage))
    return crops[int(rng.integers(len(crops)))]


# ---------------------------------------------------------------- baselines


def baseline_crop(house: House, training_pool=(), seed: int = 0) -> dict:
    """Reference crop for observed surfaces, a random candidate crop for the rest."""
    refs = reference_crops(house)
    out = {}
    for surface in sorted(house.surfaces, key=_order):
        crop = refs.get(surface) or _pick_unobserved_crop(house, surface, training_pool, seed, "baseline-crop")
        out[surface] = TextureSample(crop.image, provenance="baseline-crop", seamless=False)
    return out


def load_texture_db(root) -> list[tuple[str, np.ndarray]]:
    """All PNG/JPEG textures under ``root`` as (relative name, RGB float image)."""
    root = Path(root)
    items = []
    for p in sorted(root.rglob("*")):
        if p.suffix.lower() in (".png", ".jpg", ".jpeg"):
            with Image.open(p) as im:
                items.append((str(p.relative_to(root)), np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0))
    return items


def _resized(image, size=RETRIEVE_SIZE) -> np.ndarray:
    img = np.asarray(image, dtype=np.float32)
    if img.shape[:2] == (size, size):
        return img
    return cv2.resize(img, (size, size), interpolation=cv2.INTER_AREA)


def retrieve(crop_image, texture_db) -> int:
    """Index of the database texture with the lowest mean per-pixel L1 to the crop (both at 128 px)."""
    if not texture_db:
        raise ValueError("texture database is empty")
    q = _resized(crop_image)
    dists = [float(np.abs(_resized(img) - q).mean()) for _, img in texture_db]
    return int(np.argmin(dists))


def baseline_retrieve(house: House, texture_db, training_pool=(), seed: int = 0) -> dict:
    """Database texture closest to each surface's crop; unobserved surfaces use the crop baseline's choice."""
    if not texture_db:
        raise ValueError("texture database is empty")
    refs = reference_crops(house)
    out = {}
    for surface in sorted(house.surfaces, key=_order):
        crop = refs.get(surface) or _pick_unobserved_crop(house, surface, training_pool, seed, "baseline-crop")
        out[surface] = TextureSample(texture_db[retrieve(crop.image, texture_db)][1], provenance="baseline-retrieve")
    return out


def mean_embedding(embeddings) -> TextureEmbedding:
    embeddings = list(embeddings)
    if not embeddings:
        raise ValueError("cannot average an empty embedding set")
    return TextureEmbedding.from_vector(np.mean([e.vector for e in embeddings], axis=0))


def conditional_embeddings(model: SynthModel, training_pool) -> list[tuple[tuple[str, ...], SurfaceKind, TextureEmbedding]]:
    """Encode every training crop once: (room types, kind, embedding)."""
    return [(p.room_types, p.crop.kind, model.encode(p.crop.image)) for p in training_pool]


def baseline_naive_synth(house: House, model: SynthModel, training_embeddings, seed: int = 0, size: int = 128,
                         seamless_options: dict | None = None) -> dict:
    """Decode the mean crop embedding of each surface.

    Unobserved surfaces use the mean over training crops of the same room type
    and kind, relaxed to any room type when none exist.
    """
    out = {}
    for surface in sorted(house.surfaces, key=_order):
        rid, kind = surface
        crops = house.crops_for(surface)
        try:
            if crops:
                emb = mean_embedding(model.encode(c.image) for c in crops)
            else:
                types = set(house.room(rid).categories)
                same = [e for t, k, e in training_embeddings if k == kind and types & set(t)]
                emb = mean_embedding(same or [e for _, k, e in training_embeddings if k == kind])
            sample = model.decode(emb, size=size, seed=sub_seed(seed, house.id, rid, kind, "decode"))
            sample = make_seamless(replace(sample, provenance="baseline-naive"), **(seamless_options or {}))
        except Exception as e:  # noqa: BLE001
            raise PipelineError("baseline-naive", surface, e) from e
        out[surface] = sample
    return out


# ---------------------------------------------------------------- full method


def synth_textures(house: House, synth: SynthModel, gnn: GatedGraphNet | None, seed: int = 0, size: int = 128,
                   seamless_options: dict | None = None) -> tuple[dict, dict]:
    """Textures for every surface: selected embeddings for observed ones, propagated for the rest.

    :return: (surface -> TextureSample, surface -> TextureEmbedding)
    """
    embeddings = {}
    for surface in sorted(house.observed_surfaces, key=_order):
        try:
            embeddings[surface], _, _ = select_surface_embedding(house.crops_for(surface), synth)
        except Exception as e:  # noqa: BLE001
            raise PipelineError("select", surface, e) from e
    all_emb = dict(embeddings)
    unobserved = house.unobserved_surfaces
    if unobserved:
        if gnn is None:
            raise PipelineError("propagate", unobserved[0], ModelError("no propagation model supplied"))
        try:
            graph = build_graph(house, embeddings, priors=gnn.priors)
            predicted = propagate(graph, gnn)
        except Exception as e:  # noqa: BLE001
            raise PipelineError("propagate", unobserved[0], e) from e
        for surface in unobserved:
            all_emb[surface] = predicted[surface]
    textures = {}
    for surface in sorted(house.surfaces, key=_order):
        rid, kind = surface
        try:
            sample = synth.decode(all_emb[surface], size=size, seed=sub_seed(seed, house.id, rid, kind, "decode"))
            prov = "observed" if surface in embeddings else "propagated"
            textures[surface] = make_seamless(replace(sample, provenance=prov), **(seamless_options or {}))
        except Exception as e:  # noqa: BLE001
            raise PipelineError("decode", surface, e) from e
    return textures, all_emb


def run_pipeline(house: House, synth: SynthModel, gnn: GatedGraphNet | None, seed: int = 0, size: int = 128,
                 mesh_params: MeshParams | None = None, seamless_options: dict | None = None):
    """Texture every surface of ``house`` and bind the textures to its mesh.

    :return: (surface -> TextureSample, textured ``SceneMesh``)
    """
    textures, _ = synth_textures(house, synth, gnn, seed, size, seamless_options)
    try:
        mesh = assign_textures(build_mesh(house, mesh_params), textures)
    except Exception as e:  # noqa: BLE001
        raise PipelineError("mesh", None, e) from e
    return textures, mesh


@dataclass
class Models:
    synth: SynthModel | None = None
    gnn: GatedGraphNet | None = None
    naive: SynthModel | None = None
    texture_db: list | None = None


def texture_house(house: House, method: str, models: Models, training_pool=(), seed: int = 0, size: int = 128,
                  seamless_options: dict | None = None, naive_embeddings=None) -> dict:
    """Textures for every surface of ``house`` with the chosen method."""
    if method == "crop":
        return baseline_crop(house, training_pool, seed)
    if method == "retrieve":
        if models.texture_db is None:
            raise ModelError("the retrieve method needs a texture database")
        return baseline_retrieve(house, models.texture_db, training_pool, seed)
    if method == "naive":
        if models.naive is None:
            raise ModelError("the naive method needs a naive synthesis checkpoint")
        if naive_embeddings is None:
            naive_embeddings = conditional_embeddings(models.naive, training_pool)
        return baseline_naive_synth(house, models.naive, naive_embeddings, seed, size, seamless_options)
    if method == "synth":
        if models.synth is None:
            raise ModelError("the synth method needs a synthesis checkpoint")
        return synth_textures(house, models.synth, models.gnn, seed, size, seamless_options)[0]
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def textured_mesh(house: House, textures: dict, mesh_params: MeshParams | None = None) -> SceneMesh:
    return assign_textures(build_mesh(house, mesh_params), textures)


# ---------------------------------------------------------------- evaluation protocol


def protocol_columns(houses, method: str, models: Models, training_pool=(), seed: int = 0,
                     unobserved_fraction: float = 0.6, size: int = 128, seamless_options: dict | None = None) -> dict:
    """Texture sets and references for the observed, unobserved and all columns.

    Observed: the method runs on each house as given and is scored on its
    observed surfaces. Unobserved and all: a fraction of photos is hidden
    first; the unobserved column scores surfaces that lost all their crops and
    the all column scores every surface that has a reference. References are
    always the reference crops of the untouched house.
    """
    cols = {c: ({}, {}) for c in ("observed", "unobserved", "all")}
    naive_emb = None
    if method == "naive" and models.naive is not None:
        naive_emb = conditional_embeddings(models.naive, training_pool)
    for house in houses:
        refs = reference_crops(house)
        if not refs:
            continue
        full = texture_house(house, method, models, training_pool, seed, size, seamless_options, naive_emb)
        for s, ref in refs.items():
            cols["observed"][0][(house.id, s)] = full[s]
            cols["observed"][1][(house.id, s)] = ref.image
        reduced, _ = simulate_unobserved(house, unobserved_fraction, sub_seed(seed, house.id, None, None, "holdout"))
        part = texture_house(reduced, method, models, training_pool, seed, size, seamless_options, naive_emb)
        still = reduced.observed_surfaces
        for s, ref in refs.items():
            cols["all"][0][(house.id, s)] = part[s]
            cols["all"][1][(house.id, s)] = ref.image
            if s not in still:
                cols["unobserved"][0][(house.id, s)] = part[s]
                cols["unobserved"][1][(house.id, s)] = ref.image
    return cols


def evaluate_method(houses, method: str, models: Models, classifier: SubstanceClassifier,
                    extractor: InceptionFeatures | None = None, training_pool=(), seed: int = 0,
                    unobserved_fraction: float = 0.6, size: int = 128, seamless_options: dict | None = None) -> MetricReport:
    cols = protocol_columns(houses, method, models, training_pool, seed, unobserved_fraction, size, seamless_options)
    return evaluate(cols, classifier, extractor, method=method)
