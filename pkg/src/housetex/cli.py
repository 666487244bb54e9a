"""Command-line interface.

Data layout under ``--data``::

    houses/<id>.json        floorplans (photo paths relative to this folder)
    crops/<id>/...          extracted surface crops (``extract-crops``)
    splits.json             train/val/test house ids (``ingest``)
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import data as D
from .config import load_config
from .crops import OracleBackend, extract_house_crops
from .errors import HousetexError
from .graph import GatedGraphNet, make_example, train_gnn
from .mesh import assign_textures, build_mesh, export_scene, render_topdown
from .metrics import InceptionFeatures, SubstanceClassifier, train_classifier
from .pipeline import METHODS, Models, crop_pool, evaluate_method, load_texture_db, texture_house
from .select import select_surface_embedding
from .synth.model import SynthModel, TextureSample
from .synth.train import load_texture_dataset, split_textures, train_synth

log = logging.getLogger("housetex")


# ---------------------------------------------------------------- helpers


def _houses_dir(args) -> Path:
    return Path(args.data) / "houses"


def _crops_dir(args) -> Path:
    return Path(args.crops) if getattr(args, "crops", None) else Path(args.data) / "crops"


def _load(args, house_id) -> D.House:
    path = _houses_dir(args) / f"{house_id}.json"
    if not path.exists():
        raise FileNotFoundError(f"house not found: {path}")
    return D.load_house(path, _crops_dir(args))


def _all_ids(args) -> list[str]:
    d = _houses_dir(args)
    if not d.is_dir():
        raise FileNotFoundError(f"no houses directory: {d}")
    return D.list_houses(d)


def _splits(args) -> dict | None:
    p = Path(args.data) / "splits.json"
    return json.loads(p.read_text()) if p.exists() else None


def _training_houses(args, exclude=()) -> list[D.House]:
    splits = _splits(args)
    ids = splits["train"] if splits else _all_ids(args)
    return [h for h in (_load(args, i) for i in ids if i not in exclude) if h.crops]


def _load_synth(path) -> SynthModel:
    return SynthModel.load(path)


def _models(args, method) -> Models:
    m = Models()
    if method == "synth":
        m.synth = _load_synth(args.synth) if args.synth else None
        m.gnn = GatedGraphNet.load(args.gnn) if args.gnn else None
    elif method == "naive":
        m.naive = _load_synth(args.naive) if args.naive else None
    elif method == "retrieve" and args.texture_db:
        db_dir = Path(args.texture_db)
        if not db_dir.is_dir():
            raise FileNotFoundError(f"texture database not found: {db_dir}")
        m.texture_db = load_texture_db(db_dir)
    return m


def _seamless_options(cfg) -> dict:
    return dict(cfg.texture.seamless)


def _read_scene_textures(tex_dir) -> dict:
    tex_dir = Path(tex_dir)
    manifest_path = tex_dir / "scene.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"scene manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    textures = {}
    for m in manifest["materials"]:
        with Image.open(tex_dir / m["texture"]) as im:
            img = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
        textures[(m["room"], D.SurfaceKind(m["surface"]))] = TextureSample(
            img, m["provenance"], seamless=m["seamless"], substance=m["substance"]
        )
    return textures


# ---------------------------------------------------------------- commands


def cmd_ingest(args, cfg) -> int:
    ids, failures = [], []
    for hid in _all_ids(args):
        try:
            D.load_house(_houses_dir(args) / f"{hid}.json")
            ids.append(hid)
        except HousetexError as e:
            failures.append(f"{hid}: {e}")
    for f in failures:
        print(f"invalid house {f}", file=sys.stderr)
    if failures:
        return 1
    train, val, test = D.split_dataset(ids, cfg.splits, seed=args.seed)
    out = Path(args.data) / "splits.json"
    out.write_text(json.dumps({"train": train, "val": val, "test": test}, indent=2) + "\n")
    print(f"{len(ids)} houses valid; splits {len(train)}/{len(val)}/{len(test)} written to {out}")
    return 0


def cmd_extract_crops(args, cfg) -> int:
    backend = OracleBackend()
    for hid in args.house or _all_ids(args):
        house = D.load_house(_houses_dir(args) / f"{hid}.json")
        c = cfg.crops
        crops = extract_house_crops(house, backend, fov=c.fov, n=c.n, crop=c.crop, attempts=c.attempts,
                                    upscale=c.upscale, seed=args.seed)
        D.save_crops(_crops_dir(args), hid, crops)
        print(f"{hid}: {len(crops)} crops for {len({x.surface for x in crops})} surfaces")
    return 0


def cmd_train_synth(args, cfg) -> int:
    items = load_texture_dataset(args.textures)
    sc = cfg.synth
    sc.seed = args.seed
    if args.steps is not None:
        sc.steps = args.steps
    if args.naive:
        sc.hsv_separation = False
        sc.substance_branch = False
    train, _ = split_textures(items, n_val=min(args.val, len(items) - 1), seed=args.seed) if args.val else (items, [])
    model = train_synth(train, sc, checkpoint=args.out)
    print(f"trained on {len(train)} textures; loss {model.history[0]['loss']:.4f} -> {model.history[-1]['loss']:.4f}; "
          f"saved {args.out}")
    return 0


def cmd_train_classifier(args, cfg) -> int:
    items = load_texture_dataset(args.textures)
    clf = train_classifier(items, steps=args.steps, seed=args.seed, checkpoint=args.out)
    print(f"classifier {clf.fingerprint()} saved to {args.out}")
    return 0


def _embedding_examples(houses, synth):
    examples = []
    for h in houses:
        emb = {s: select_surface_embedding(h.crops_for(s), synth)[0] for s in sorted(h.observed_surfaces, key=lambda s: (s[0], s[1].index))}
        if emb:
            examples.append(make_example(h, emb))
    return examples


def cmd_train_gnn(args, cfg) -> int:
    synth = _load_synth(args.synth)
    splits = _splits(args)
    train_ids = splits["train"] if splits else _all_ids(args)
    val_ids = splits["val"] if splits else []
    train = _embedding_examples([_load(args, i) for i in train_ids], synth)
    val = _embedding_examples([_load(args, i) for i in val_ids], synth)
    gc = cfg.gnn
    gc.seed = args.seed
    if args.epochs is not None:
        gc.epochs = args.epochs
    model = train_gnn(train, gc, val_examples=val or None, checkpoint=args.out)
    last = model.history[-1]
    print(f"trained on {len(train)} houses; final train L1 {last['train_l1']:.4f}; saved {args.out}")
    return 0


def cmd_texture(args, cfg) -> int:
    house = _load(args, args.house)
    models = _models(args, args.method)
    pool = crop_pool(_training_houses(args, exclude={house.id})) if args.method != "synth" else []
    textures = texture_house(house, args.method, models, pool, seed=args.seed, size=cfg.texture.size,
                             seamless_options=_seamless_options(cfg))
    mesh = assign_textures(build_mesh(house, cfg.mesh), textures)
    out = Path(args.out) / house.id
    export_scene(mesh, out)
    print(f"{house.id}: {len(textures)} textures ({args.method}) written to {out}")
    return 0


def cmd_evaluate(args, cfg) -> int:
    classifier = SubstanceClassifier.load(args.classifier)
    splits = _splits(args)
    ids = args.house or (splits["test"] if splits else _all_ids(args))
    houses = [_load(args, i) for i in ids]
    models = _models(args, args.method)
    pool = crop_pool(_training_houses(args, exclude=set(ids)))
    extractor = InceptionFeatures(weights=cfg.metrics.fid_weights, seed=0, resolution=cfg.metrics.fid_resolution)
    report = evaluate_method(houses, args.method, models, classifier, extractor, pool, seed=args.seed,
                             unobserved_fraction=cfg.metrics.unobserved_fraction, size=cfg.texture.size,
                             seamless_options=_seamless_options(cfg))
    report.write(args.out)
    print(report.to_csv(), end="")
    return 0


def cmd_export(args, cfg) -> int:
    house = _load(args, args.house)
    mesh = assign_textures(build_mesh(house, cfg.mesh), _read_scene_textures(args.textures))
    export_scene(mesh, args.out, format=args.format)
    print(f"{house.id}: scene exported to {args.out}")
    return 0


def cmd_render_topdown(args, cfg) -> int:
    house = _load(args, args.house)
    img = render_topdown(house, _read_scene_textures(args.textures), px_per_m=args.px_per_m, params=cfg.mesh)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img).save(args.out)
    print(f"{house.id}: top-down view written to {args.out}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="global random seed (default 0)")
    common.add_argument("--config", default=argparse.SUPPRESS, help="YAML configuration file")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="housetex", description="Texture floorplan meshes from sparse room photos.",
                                parents=[common])
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, help_, fn):
        s = sub.add_parser(name, help=help_, parents=[common])
        s.set_defaults(func=fn)
        return s

    def data_arg(s):
        s.add_argument("--data", required=True, help="dataset root holding houses/ (and crops/)")
        s.add_argument("--crops", help="crop directory (default <data>/crops)")

    def model_args(s):
        s.add_argument("--method", required=True, choices=METHODS)
        s.add_argument("--synth", help="synthesis checkpoint (synth method)")
        s.add_argument("--gnn", help="propagation checkpoint (synth method)")
        s.add_argument("--naive", help="naive synthesis checkpoint (naive method)")
        s.add_argument("--texture-db", help="texture database directory (retrieve method)")

    s = add("ingest", "validate houses and write splits.json", cmd_ingest)
    data_arg(s)

    s = add("extract-crops", "segment, rectify and crop every photo", cmd_extract_crops)
    data_arg(s)
    s.add_argument("--house", action="append", help="house id (repeatable; default all)")

    s = add("train-synth", "train the texture synthesiser", cmd_train_synth)
    s.add_argument("--textures", required=True, help="directory with <substance>/<name>.png")
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--steps", type=int, help="override training steps")
    s.add_argument("--val", type=int, default=0, help="hold out this many textures")
    s.add_argument("--naive", action="store_true", help="train the baseline without colour separation or substance branch")

    s = add("train-classifier", "train the substance classifier used by SUBS", cmd_train_classifier)
    s.add_argument("--textures", required=True, help="directory with <substance>/<name>.png")
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--steps", type=int, default=300)

    s = add("train-gnn", "train the propagation network", cmd_train_gnn)
    data_arg(s)
    s.add_argument("--synth", required=True, help="synthesis checkpoint used to embed crops")
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--epochs", type=int, help="override training epochs")

    s = add("texture", "texture one house and export its scene", cmd_texture)
    data_arg(s)
    s.add_argument("--house", required=True)
    model_args(s)
    s.add_argument("--out", required=True, help="output root; files go to <out>/<house>/")

    s = add("evaluate", "score a method on the observed/unobserved/all protocol", cmd_evaluate)
    data_arg(s)
    s.add_argument("--house", action="append", help="house id (repeatable; default test split or all)")
    model_args(s)
    s.add_argument("--classifier", required=True, help="substance classifier checkpoint")
    s.add_argument("--out", required=True, help="directory for report.json and report.csv")

    s = add("export", "re-export a textured scene", cmd_export)
    data_arg(s)
    s.add_argument("--house", required=True)
    s.add_argument("--textures", required=True, help="directory written by the texture command")
    s.add_argument("--out", required=True)
    s.add_argument("--format", default="obj", choices=("obj",))

    s = add("render-topdown", "ceiling-removed top-down PNG", cmd_render_topdown)
    data_arg(s)
    s.add_argument("--house", required=True)
    s.add_argument("--textures", required=True, help="directory written by the texture command")
    s.add_argument("--out", required=True, help="PNG path")
    s.add_argument("--px-per-m", type=float, default=40.0)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.seed = getattr(args, "seed", 0)
    args.config = getattr(args, "config", None)
    verbose = getattr(args, "verbose", False)
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (HousetexError, FileNotFoundError, ValueError, KeyError, OSError) as e:
        print(f"housetex {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
