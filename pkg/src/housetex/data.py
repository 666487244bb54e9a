"""Floorplan scene model, on-disk formats, splits and the held-out photo protocol."""

from __future__ import annotations

import enum
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import IntegrityError, ParseError

ROOM_TYPES = (
    "reception",
    "bedroom",
    "kitchen",
    "bathroom",
    "outdoor",
    "closet",
    "entrance",
    "corridor",
    "staircase",
    "balcony",
    "terrace",
    "unknown",
)

CROP_SIZE = 128


class SurfaceKind(enum.Enum):
    FLOOR = "floor"
    WALL = "wall"
    CEILING = "ceiling"

    @property
    def index(self) -> int:
        return _KIND_INDEX[self]

    @classmethod
    def from_index(cls, index: int) -> "SurfaceKind":
        return _KINDS[index - 1]

    def __str__(self):
        return self.value


_KINDS = (SurfaceKind.FLOOR, SurfaceKind.WALL, SurfaceKind.CEILING)
_KIND_INDEX = {k: i + 1 for i, k in enumerate(_KINDS)}
SURFACE_KINDS = _KINDS


def surface_kind(value) -> SurfaceKind:
    if isinstance(value, SurfaceKind):
        return value
    if isinstance(value, int):
        return SurfaceKind.from_index(value)
    return SurfaceKind(value)


@dataclass(frozen=True)
class Room:
    id: int
    categories: tuple[str, ...]
    polygon: tuple[tuple[float, float], ...]
    doors: tuple[int, ...] = ()

    @property
    def category(self) -> str:
        return self.categories[0]


@dataclass(frozen=True)
class Photo:
    id: str
    file: str
    room_id: int
    base_dir: str = ""

    @property
    def path(self) -> Path:
        return Path(self.base_dir) / self.file

    def load(self) -> np.ndarray:
        """8-bit RGB array of the photo."""
        with Image.open(self.path) as im:
            return np.asarray(im.convert("RGB"))


@dataclass(frozen=True)
class Opening:
    wall: tuple[tuple[float, float], tuple[float, float]]
    kind: str
    room_ids: tuple[int, ...] = ()


@dataclass(frozen=True)
class FixedObject:
    category: str
    position: tuple[float, float]
    room_id: int | None = None


@dataclass(frozen=True, eq=False)
class SurfaceCrop:
    image: np.ndarray
    house_id: str
    room_id: int
    kind: SurfaceKind
    photo_id: str | None = None
    is_reference: bool = False

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.float32)
        if img.shape != (CROP_SIZE, CROP_SIZE, 3):
            raise ValueError(f"crop must be {CROP_SIZE}x{CROP_SIZE}x3, got {img.shape}")
        img = np.clip(img, 0.0, 1.0)
        img.setflags(write=False)
        object.__setattr__(self, "image", img)
        object.__setattr__(self, "kind", surface_kind(self.kind))

    @property
    def surface(self) -> tuple[int, SurfaceKind]:
        return (self.room_id, self.kind)


@dataclass(frozen=True)
class House:
    id: str
    rooms: tuple[Room, ...]
    photos: tuple[Photo, ...] = ()
    openings: tuple[Opening, ...] = ()
    objects: tuple[FixedObject, ...] = ()
    scale: float = 1.0
    crops: tuple[SurfaceCrop, ...] = field(default=(), compare=False)

    def room(self, room_id: int) -> Room:
        for r in self.rooms:
            if r.id == room_id:
                return r
        raise KeyError(room_id)

    @property
    def room_ids(self) -> list[int]:
        return [r.id for r in self.rooms]

    @property
    def surfaces(self) -> list[tuple[int, SurfaceKind]]:
        return [(r.id, k) for r in self.rooms for k in SURFACE_KINDS]

    @property
    def observed_surfaces(self) -> set[tuple[int, SurfaceKind]]:
        return {c.surface for c in self.crops}

    @property
    def unobserved_surfaces(self) -> list[tuple[int, SurfaceKind]]:
        obs = self.observed_surfaces
        return [s for s in self.surfaces if s not in obs]

    def crops_for(self, surface) -> list[SurfaceCrop]:
        room_id, kind = surface
        kind = surface_kind(kind)
        return [c for c in self.crops if c.room_id == room_id and c.kind == kind]

    def reference_crop(self, surface) -> SurfaceCrop | None:
        for c in self.crops_for(surface):
            if c.is_reference:
                return c
        return None

    def door_edges(self) -> list[tuple[int, int]]:
        edges = set()
        for r in self.rooms:
            for d in r.doors:
                edges.add((min(r.id, d), max(r.id, d)))
        return sorted(edges)

    def with_crops(self, crops) -> "House":
        return replace(self, crops=tuple(crops))


# ---------------------------------------------------------------- JSON format


def _require(obj, key, where):
    if not isinstance(obj, dict) or key not in obj:
        raise ParseError(f"{where}.{key}" if where else key, "missing required field")
    return obj[key]


def _point(value, where):
    if (
        not isinstance(value, (list, tuple))
        or len(value) != 2
        or not all(isinstance(v, (int, float)) and math.isfinite(v) for v in value)
    ):
        raise ParseError(where, f"expected [x, y], got {value!r}")
    return (float(value[0]), float(value[1]))


def _signed_area(poly):
    a = 0.0
    for (x0, y0), (x1, y1) in zip(poly, poly[1:] + poly[:1]):
        a += x0 * y1 - x1 * y0
    return a / 2.0


def house_from_dict(data: dict, base_dir: str = "") -> House:
    """Validate a house JSON document and build the immutable ``House``.

    Clockwise polygons are reversed to CCW and door links are made symmetric,
    including links implied by door openings that name two rooms.
    """
    if not isinstance(data, dict):
        raise ParseError("<root>", "expected a JSON object")
    house_id = _require(data, "id", "")
    if not isinstance(house_id, (str, int)):
        raise ParseError("id", "expected string")
    house_id = str(house_id)
    scale = data.get("scale", 1.0)
    if not isinstance(scale, (int, float)) or not scale > 0:
        raise ParseError("scale", f"expected positive number, got {scale!r}")

    raw_rooms = _require(data, "rooms", "")
    if not isinstance(raw_rooms, list) or not raw_rooms:
        raise ParseError("rooms", "expected a non-empty list")
    rooms = {}
    doors: dict[int, set[int]] = {}
    for i, raw in enumerate(raw_rooms):
        where = f"rooms[{i}]"
        rid = _require(raw, "id", where)
        if not isinstance(rid, int) or isinstance(rid, bool):
            raise ParseError(f"{where}.id", "expected integer")
        if rid in rooms:
            raise IntegrityError(f"duplicate room id {rid}")
        cat = _require(raw, "category", where)
        cats = [cat] if isinstance(cat, str) else cat
        if not isinstance(cats, list) or not cats:
            raise ParseError(f"{where}.category", "expected a room type or list of room types")
        for c in cats:
            if c not in ROOM_TYPES:
                raise ParseError(f"{where}.category", f"unknown room type {c!r}")
        poly_raw = _require(raw, "polygon", where)
        if not isinstance(poly_raw, list) or len(poly_raw) < 3:
            raise ParseError(f"{where}.polygon", "expected at least 3 points")
        poly = [_point(p, f"{where}.polygon[{j}]") for j, p in enumerate(poly_raw)]
        area = _signed_area(poly)
        if abs(area) < 1e-12:
            raise ParseError(f"{where}.polygon", "degenerate polygon")
        if area < 0:
            poly = poly[::-1]
        d = raw.get("doors", [])
        if not isinstance(d, list) or not all(isinstance(x, int) for x in d):
            raise ParseError(f"{where}.doors", "expected list of room ids")
        doors.setdefault(rid, set()).update(d)
        rooms[rid] = (tuple(dict.fromkeys(cats)), tuple(poly))

    openings = []
    for i, raw in enumerate(data.get("openings", []) or []):
        where = f"openings[{i}]"
        wall = _require(raw, "wall", where)
        if not isinstance(wall, list) or len(wall) != 2:
            raise ParseError(f"{where}.wall", "expected [p0, p1]")
        p0, p1 = (_point(p, f"{where}.wall[{j}]") for j, p in enumerate(wall))
        kind = _require(raw, "kind", where)
        if kind not in ("door", "window"):
            raise ParseError(f"{where}.kind", f"expected 'door' or 'window', got {kind!r}")
        rids = raw.get("roomIds", [])
        if not isinstance(rids, list):
            raise ParseError(f"{where}.roomIds", "expected list")
        for r in rids:
            if r not in rooms:
                raise IntegrityError(f"{where} references missing room {r}")
        if kind == "door" and len(rids) == 2:
            doors.setdefault(rids[0], set()).add(rids[1])
            doors.setdefault(rids[1], set()).add(rids[0])
        openings.append(Opening((p0, p1), kind, tuple(rids)))

    for rid, linked in list(doors.items()):
        for other in linked:
            if other not in rooms:
                raise IntegrityError(f"room {rid} has a door to missing room {other}")
            if other == rid:
                raise IntegrityError(f"room {rid} has a door to itself")
            doors.setdefault(other, set()).add(rid)

    photos = []
    seen = set()
    for i, raw in enumerate(data.get("photos", []) or []):
        where = f"photos[{i}]"
        pid = str(_require(raw, "id", where))
        file = _require(raw, "file", where)
        if not isinstance(file, str):
            raise ParseError(f"{where}.file", "expected string")
        rid = _require(raw, "roomId", where)
        if rid not in rooms:
            raise IntegrityError(f"photo {pid} references missing room {rid}")
        if pid in seen:
            raise IntegrityError(f"duplicate photo id {pid}")
        seen.add(pid)
        photos.append(Photo(pid, file, rid, base_dir))

    objects = []
    for i, raw in enumerate(data.get("objects", []) or []):
        where = f"objects[{i}]"
        cat = _require(raw, "category", where)
        pos = _point(_require(raw, "position", where), f"{where}.position")
        rid = raw.get("roomId")
        if rid is not None and rid not in rooms:
            raise IntegrityError(f"{where} references missing room {rid}")
        objects.append(FixedObject(str(cat), pos, rid))

    room_objs = tuple(
        Room(rid, cats, poly, tuple(sorted(doors.get(rid, ()))))
        for rid, (cats, poly) in sorted(rooms.items())
    )
    return House(
        id=house_id,
        rooms=room_objs,
        photos=tuple(photos),
        openings=tuple(openings),
        objects=tuple(objects),
        scale=float(scale),
    )


def house_to_dict(house: House) -> dict:
    out = {
        "id": house.id,
        "scale": house.scale,
        "rooms": [
            {
                "id": r.id,
                "category": r.categories[0] if len(r.categories) == 1 else list(r.categories),
                "polygon": [list(p) for p in r.polygon],
                "doors": list(r.doors),
            }
            for r in house.rooms
        ],
        "openings": [
            {"wall": [list(o.wall[0]), list(o.wall[1])], "kind": o.kind, "roomIds": list(o.room_ids)}
            for o in house.openings
        ],
        "photos": [{"id": p.id, "file": p.file, "roomId": p.room_id} for p in house.photos],
    }
    if house.objects:
        out["objects"] = [
            {"category": o.category, "position": list(o.position), **({"roomId": o.room_id} if o.room_id is not None else {})}
            for o in house.objects
        ]
    return out


def dumps_house(house: House) -> str:
    """Canonical JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(house_to_dict(house), indent=2, sort_keys=True) + "\n"


def load_house(path, crops_root=None) -> House:
    """Load and validate a house JSON file.

    Photo paths are resolved relative to the JSON file. If ``crops_root`` is
    given and holds an index for this house, its crops are attached.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError("<root>", f"invalid JSON: {e}") from e
    house = house_from_dict(data, base_dir=str(path.parent))
    if crops_root is not None and (Path(crops_root) / house.id / "index.json").exists():
        house = house.with_crops(load_crops(crops_root, house.id))
    return house


def save_house(house: House, path) -> None:
    Path(path).write_text(dumps_house(house))


# ---------------------------------------------------------------- crop storage


def _to_png(image: np.ndarray) -> Image.Image:
    return Image.fromarray(np.round(np.clip(image, 0, 1) * 255).astype(np.uint8))


def save_crops(root, house_id: str, crops) -> Path:
    """Write crops as ``<root>/<house>/<room>_<surface>/<n>.png`` plus ``index.json``."""
    base = Path(root) / str(house_id)
    base.mkdir(parents=True, exist_ok=True)
    counters: dict[str, int] = {}
    entries = []
    for c in crops:
        sub = f"{c.room_id}_{c.kind.value}"
        n = counters.get(sub, 0)
        counters[sub] = n + 1
        rel = f"{sub}/{n}.png"
        (base / sub).mkdir(exist_ok=True)
        _to_png(c.image).save(base / rel)
        entries.append(
            {"file": rel, "room": c.room_id, "surface": c.kind.value, "photo": c.photo_id, "reference": bool(c.is_reference)}
        )
    (base / "index.json").write_text(json.dumps({"house": str(house_id), "crops": entries}, indent=2) + "\n")
    return base


def load_crops(root, house_id: str) -> list[SurfaceCrop]:
    base = Path(root) / str(house_id)
    index = json.loads((base / "index.json").read_text())
    crops = []
    for e in index["crops"]:
        with Image.open(base / e["file"]) as im:
            img = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
        crops.append(SurfaceCrop(img, str(house_id), e["room"], e["surface"], e.get("photo"), e.get("reference", False)))
    return crops


# ---------------------------------------------------------------- splits


def _largest_remainder(n: int, ratios) -> list[int]:
    quotas = [n * r for r in ratios]
    sizes = [math.floor(q) for q in quotas]
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def split_dataset(house_ids, ratios=(0.6, 0.2, 0.2), seed: int = 0):
    """Shuffle ids and partition them into train/val/test lists.

    Sizes use largest-remainder rounding so they always sum to ``len(house_ids)``.
    """
    ids = list(house_ids)
    if not ids:
        raise ValueError("cannot split an empty id list")
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    sizes = _largest_remainder(len(ids), ratios)
    perm = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in perm]
    a, b = sizes[0], sizes[0] + sizes[1]
    return shuffled[:a], shuffled[a:b], shuffled[b:]


# ---------------------------------------------------------------- held-out photos


def simulate_unobserved(house: House, fraction: float, seed: int = 0):
    """Hide ``floor(fraction * n_photos)`` whole photos together with their crops.

    Returns the reduced house and the list of held-out crops, which remain
    available as evaluation references.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    if not house.photos:
        raise ValueError(f"house {house.id} has no photos")
    n_hide = math.floor(fraction * len(house.photos) + 1e-9)
    ids = sorted(p.id for p in house.photos)
    rng = np.random.default_rng(seed)
    hidden = {ids[i] for i in rng.choice(len(ids), size=n_hide, replace=False)} if n_hide else set()
    kept_photos = tuple(p for p in house.photos if p.id not in hidden)
    kept = tuple(c for c in house.crops if c.photo_id not in hidden)
    held_out = [c for c in house.crops if c.photo_id in hidden]
    return replace(house, photos=kept_photos, crops=kept), held_out


def list_houses(houses_dir) -> list[str]:
    return sorted(os.path.splitext(p)[0] for p in os.listdir(houses_dir) if p.endswith(".json"))
