"""Synthetic fixtures: procedural stationary textures, rendered room photos with
oracle sidecars, and small house datasets for desk-scale runs."""

from __future__ import annotations

import json
import math
from pathlib import Path

import cv2
import numpy as np
from PIL import Image
from scipy import ndimage

from .crops import intrinsics, plane_basis
from .data import house_from_dict, save_house
from .synth.color import hsv_to_rgb_np
from .synth.model import SUBSTANCES

# ---------------------------------------------------------------- textures


def _smooth_noise(rng, size, sigma):
    n = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma, mode="wrap")
    return n / (n.std() + 1e-12)


def _tint(gray, hsv, dh=0.0, ds=0.0):
    """Modulate a base HSV colour: value by ``gray``, hue and saturation by ``dh``, ``ds`` (zero-mean offsets)."""
    h, s, v = hsv
    out = np.empty(gray.shape + (3,))
    out[..., 0] = np.mod(h + dh, 1.0)
    out[..., 1] = np.clip(s + ds, 0, 1)
    out[..., 2] = np.clip(v + gray, 0, 1)
    return hsv_to_rgb_np(out)


def stationary_texture(substance: str, size: int = 256, seed: int = 0, hsv=None) -> np.ndarray:
    """Periodic procedural exemplar of one substance, float32 HxWx3 in [0, 1]."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    if substance == "wood":
        hsv = hsv or (rng.uniform(0.05, 0.1), rng.uniform(0.45, 0.7), rng.uniform(0.45, 0.7))
        k = int(rng.integers(6, 12))
        warp = 0.04 * _smooth_noise(rng, size, size / 16)
        g = 0.12 * np.sin(2 * np.pi * (k * (yy + warp))) + 0.04 * _smooth_noise(rng, size, 1.0)
    elif substance == "plaster":
        hsv = hsv or (rng.uniform(0, 1), rng.uniform(0.05, 0.25), rng.uniform(0.75, 0.92))
        g = 0.04 * _smooth_noise(rng, size, size / 24) + 0.015 * _smooth_noise(rng, size, 1.0)
    elif substance == "carpet":
        hsv = hsv or (rng.uniform(0, 1), rng.uniform(0.3, 0.6), rng.uniform(0.35, 0.6))
        g = 0.1 * _smooth_noise(rng, size, 0.7) + 0.03 * _smooth_noise(rng, size, 4.0)
    elif substance == "tile":
        hsv = hsv or (rng.uniform(0, 1), rng.uniform(0.05, 0.4), rng.uniform(0.6, 0.85))
        n_tiles = int(rng.choice([4, 8]))
        cell = size // n_tiles
        iy, ix = (np.mgrid[0:size, 0:size] // cell)
        per_tile = rng.normal(0, 0.03, (n_tiles, n_tiles))
        g = per_tile[iy % n_tiles, ix % n_tiles] + 0.01 * _smooth_noise(rng, size, 1.0)
        my, mx = np.mgrid[0:size, 0:size] % cell
        grout = (my < 3) | (mx < 3)
        g = np.where(grout, -0.35, g)
    else:
        raise ValueError(f"unknown substance {substance!r}")
    # low-frequency hue and saturation drift, as in real materials
    dh = 0.02 * _smooth_noise(rng, size, size / 32)
    ds = 0.04 * _smooth_noise(rng, size, size / 32)
    return _tint(g, hsv, dh, ds).astype(np.float32)


def save_png(path, image) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.round(np.clip(image, 0, 1) * 255).astype(np.uint8)).save(path)


def make_texture_dataset(root, per_class: int = 2, size: int = 256, seed: int = 0) -> list[Path]:
    """Write ``<root>/<substance>/<substance>_<i>.png``."""
    paths = []
    for si, sub in enumerate(SUBSTANCES):
        for i in range(per_class):
            p = Path(root) / sub / f"{sub}_{i:03d}.png"
            save_png(p, stationary_texture(sub, size, seed=seed * 1000 + si * 100 + i))
            paths.append(p)
    return paths


def make_texture_db(root, n: int = 12, size: int = 128, seed: int = 0) -> list[Path]:
    """Flat directory of tileable textures for the retrieval baseline."""
    paths = []
    for i in range(n):
        sub = SUBSTANCES[i % len(SUBSTANCES)]
        p = Path(root) / f"{sub}_{i:03d}.png"
        save_png(p, stationary_texture(sub, size, seed=seed * 7919 + i + 500))
        paths.append(p)
    return paths


# ---------------------------------------------------------------- rendering

# world frame: x right, y down, z forward; camera at the origin
ROOM_BOX = {
    # label: (kind, world normal facing the camera, distance)
    1: ("floor", (0.0, -1.0, 0.0), 1.5),
    2: ("ceiling", (0.0, 1.0, 0.0), 1.0),
    3: ("wall", (1.0, 0.0, 0.0), 2.0),
    4: ("wall", (0.0, 0.0, -1.0), 3.5),
    5: ("wall", (-1.0, 0.0, 0.0), 2.0),
}


def _rotation(yaw_deg: float, pitch_deg: float) -> np.ndarray:
    """World-to-camera rotation: yaw about y, then pitch about x (positive looks down)."""
    a, b = math.radians(yaw_deg), math.radians(pitch_deg)
    ry = np.array([[math.cos(a), 0, -math.sin(a)], [0, 1, 0], [math.sin(a), 0, math.cos(a)]])
    rx = np.array([[1, 0, 0], [0, math.cos(b), -math.sin(b)], [0, math.sin(b), math.cos(b)]])
    return rx @ ry


def render_planes(planes, textures, width=320, height=240, fov=60.0, rotation=None, px_per_m=200.0,
                  supersample=2, light=None):
    """Ray-cast textured planes seen from the origin.

    ``planes`` maps label -> (kind, world normal, distance), with the plane
    ``n . X = -distance``. Each label's texture is tiled over the plane using
    the same in-plane axes as the rectifier. Returns (rgb uint8, label map,
    camera-frame planes dict).
    """
    R = np.eye(3) if rotation is None else np.asarray(rotation)
    W, H = width * supersample, height * supersample
    K = intrinsics(W, H, fov)
    ys, xs = np.mgrid[0:H, 0:W] + 0.5
    rays_c = np.stack([xs, ys, np.ones_like(xs)], -1) @ np.linalg.inv(K).T
    rays_w = rays_c @ R  # R^T applied to row vectors
    best_t = np.full((H, W), np.inf)
    label = np.zeros((H, W), dtype=np.int64)
    for lab, (_, n_w, d) in planes.items():
        denom = rays_w @ np.asarray(n_w)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(denom < -1e-9, -d / denom, np.inf)
        closer = t < best_t
        best_t[closer] = t[closer]
        label[closer] = lab
    rgb = np.zeros((H, W, 3), dtype=np.float32)
    cam_planes = {}
    for lab, (kind, n_w, d) in planes.items():
        n_c = R @ np.asarray(n_w, dtype=np.float64)
        cam_planes[lab] = {"kind": kind, "normal": n_c.tolist(), "depth": float(d)}
        m = label == lab
        if not m.any():
            continue
        pts = rays_c[m] * best_t[m][:, None]
        u, v = plane_basis(n_c)
        tex = np.asarray(textures[lab], dtype=np.float32)
        th, tw = tex.shape[:2]
        # texel centres sit at integer + 0.5 texture coordinates
        coords = np.stack([pts @ v * px_per_m - 0.5, pts @ u * px_per_m - 0.5])
        samp = np.stack(
            [ndimage.map_coordinates(tex[..., c], coords, order=1, mode="grid-wrap") for c in range(3)], axis=-1
        )
        if light is not None:
            samp = samp * light(pts @ R)[:, None]
        rgb[m] = samp
    rgb = cv2.resize(rgb, (width, height), interpolation=cv2.INTER_AREA)
    # a label survives downsampling only where every subsample agreed
    lab_small = label.reshape(height, supersample, width, supersample)
    agree = (lab_small == lab_small[:, :1, :, :1]).all(axis=(1, 3))
    label_out = np.where(agree, lab_small[:, 0, :, 0], 0)
    return np.round(np.clip(rgb, 0, 1) * 255).astype(np.uint8), label_out, cam_planes


def _room_light(strength):
    def light(pw):
        return np.clip(1.0 - strength * (pw[:, 0] + 2.0) / 4.0 - 0.25 * strength * (pw[:, 2] / 3.5), 0.2, 1.2)

    return light


def render_room_photo(floor, wall, ceiling, out_path, yaw=0.0, pitch=12.0, fov=60.0, width=320, height=240,
                      light_strength=0.0) -> None:
    """Render a box-room photo and write ``out_path`` plus its ``.masks.png`` / ``.plane.json`` sidecars."""
    textures = {1: floor, 2: ceiling, 3: wall, 4: wall, 5: wall}
    light = _room_light(light_strength) if light_strength else None
    rgb, label, planes = render_planes(ROOM_BOX, textures, width, height, fov, _rotation(yaw, pitch), light=light)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(rgb).save(out_path)
    Image.fromarray(label.astype(np.uint8)).save(out_path.with_name(out_path.name + ".masks.png"))
    meta = {"fov": fov, "planes": {str(k): v for k, v in planes.items()}}
    out_path.with_name(out_path.name + ".plane.json").write_text(json.dumps(meta, indent=2) + "\n")


def checkerboard(size=512, cells=8):
    yy, xx = np.mgrid[0:size, 0:size] * cells // size
    v = ((yy + xx) % 2).astype(np.float32)
    return np.repeat(v[..., None], 3, axis=2)


# ---------------------------------------------------------------- houses

TWO_ROOM = {
    "id": "two_room",
    "scale": 1.0,
    "rooms": [
        {"id": 0, "category": "bedroom", "polygon": [[0, 0], [4, 0], [4, 4], [0, 4]], "doors": [1]},
        {"id": 1, "category": "kitchen", "polygon": [[4, 0], [7, 0], [7, 4], [4, 4]], "doors": [0]},
    ],
    "openings": [
        {"wall": [[4, 1.5], [4, 2.4]], "kind": "door", "roomIds": [0, 1]},
        {"wall": [[1, 0], [2.2, 0]], "kind": "window", "roomIds": [0]},
    ],
    "photos": [
        {"id": "p0", "file": "photos/two_room/p0.png", "roomId": 0},
        {"id": "p1", "file": "photos/two_room/p1.png", "roomId": 1},
    ],
}

_PALETTE_SUBSTANCE = {"floor": ("wood", "carpet", "tile"), "wall": ("plaster", "tile"), "ceiling": ("plaster",)}


def _surface_textures(rng, house_style, category):
    """Per-kind textures for one room; styles correlate across a house and room type."""
    out = {}
    for kind in ("floor", "wall", "ceiling"):
        sub, hsv = house_style[kind]
        if kind == "floor" and category in ("bathroom", "kitchen"):
            sub, hsv = "tile", house_style["wet"]
        out[kind] = stationary_texture(sub, 256, seed=int(rng.integers(1 << 30)), hsv=hsv)
    return out


def _house_style(rng):
    return {
        "floor": (str(rng.choice(["wood", "carpet"])), (rng.uniform(0.04, 0.12), rng.uniform(0.3, 0.7), rng.uniform(0.4, 0.7))),
        "wall": ("plaster", (rng.uniform(0, 1), rng.uniform(0.05, 0.3), rng.uniform(0.7, 0.9))),
        "ceiling": ("plaster", (0.1, 0.03, rng.uniform(0.85, 0.95))),
        "wet": (rng.uniform(0.5, 0.65), rng.uniform(0.1, 0.35), rng.uniform(0.65, 0.85)),
    }


def _pitch(rng, index):
    """Even photos look down at the floor, odd photos up at the ceiling."""
    return float(rng.uniform(-2, 14)) if index % 2 == 0 else float(rng.uniform(-20, -10))


def write_house(root, spec: dict, seed: int = 0, light_strength: float = 0.35):
    """Write ``houses/<id>.json`` and render one photo per photo entry under ``root``."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    style = _house_style(rng)
    cats = {r["id"]: (r["category"] if isinstance(r["category"], str) else r["category"][0]) for r in spec["rooms"]}
    room_tex = {rid: _surface_textures(rng, style, cat) for rid, cat in cats.items()}
    (root / "houses").mkdir(parents=True, exist_ok=True)
    house = house_from_dict(spec, base_dir=str(root / "houses"))
    for i, ph in enumerate(spec.get("photos", [])):
        tex = room_tex[ph["roomId"]]
        render_room_photo(
            tex["floor"], tex["wall"], tex["ceiling"], root / "houses" / ph["file"],
            yaw=float(rng.uniform(-25, 25)), pitch=_pitch(rng, i), light_strength=light_strength,
        )
    save_house(house, root / "houses" / f"{house.id}.json")
    return house


def make_two_room(root, seed: int = 0):
    return write_house(root, TWO_ROOM, seed=seed)


def random_house_spec(house_id: str, rng, n_rooms=None, photo_prob=0.6) -> dict:
    """Rooms laid out on a grid of rectangles, doors between some neighbours."""
    n_rooms = n_rooms or int(rng.integers(2, 6))
    cols = math.ceil(math.sqrt(n_rooms))
    w = rng.uniform(2.5, 4.5, size=cols)
    h = rng.uniform(2.5, 4.0, size=math.ceil(n_rooms / cols))
    xs = np.concatenate([[0], np.cumsum(w)])
    ys = np.concatenate([[0], np.cumsum(h)])
    cats_pool = ["bedroom", "kitchen", "bathroom", "reception", "corridor", "closet"]
    rooms, openings, photos = [], [], []
    cell = {}
    for i in range(n_rooms):
        cx, cy = i % cols, i // cols
        cell[(cx, cy)] = i
        x0, x1, y0, y1 = (round(float(v), 3) for v in (xs[cx], xs[cx + 1], ys[cy], ys[cy + 1]))
        cat = "reception" if i == 0 else str(rng.choice(cats_pool))
        rooms.append({"id": i, "category": cat, "polygon": [[x0, y0], [x1, y0], [x1, y1], [x0, y1]], "doors": []})
    for (cx, cy), i in cell.items():
        for dx, dy in ((1, 0), (0, 1)):
            j = cell.get((cx + dx, cy + dy))
            if j is None or (rng.uniform() < 0.25 and i != 0):
                continue
            if dx:
                x = round(float(xs[cx + 1]), 3)
                ym = float(ys[cy] + ys[cy + 1]) / 2
                wall = [[x, round(ym - 0.45, 3)], [x, round(ym + 0.45, 3)]]
            else:
                y = round(float(ys[cy + 1]), 3)
                xm = float(xs[cx] + xs[cx + 1]) / 2
                wall = [[round(xm - 0.45, 3), y], [round(xm + 0.45, 3), y]]
            openings.append({"wall": wall, "kind": "door", "roomIds": [i, j]})
            rooms[i]["doors"].append(j)
    for i in range(n_rooms):
        if rng.uniform() < photo_prob or i == 0:
            for k in range(int(rng.integers(1, 3))):
                pid = f"r{i}p{k}"
                photos.append({"id": pid, "file": f"photos/{house_id}/{pid}.png", "roomId": i})
    return {"id": house_id, "scale": 1.0, "rooms": rooms, "openings": openings, "photos": photos}


def make_dataset(root, n_houses: int = 6, seed: int = 0, include_two_room: bool = True) -> list[str]:
    """Write a small floorplan-and-photo dataset under ``root/houses``; returns house ids."""
    rng = np.random.default_rng(seed)
    ids = []
    if include_two_room:
        make_two_room(root, seed=seed)
        ids.append("two_room")
    for i in range(n_houses):
        hid = f"house_{i:03d}"
        write_house(root, random_house_spec(hid, rng), seed=seed * 100 + i + 1)
        ids.append(hid)
    return ids


