"""Lift a vector floorplan to a textured triangle mesh and export it."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import shapely
from PIL import Image
from shapely.geometry import Polygon

from .data import House, SurfaceKind
from .errors import CoverageError, GeometryError, PlacementError

ON_WALL_TOL = 1e-4


@dataclass(frozen=True)
class MeshParams:
    wall_height: float = 2.5
    wall_thickness: float = 0.0
    door_height: float = 2.0
    window_sill: float = 0.9
    window_top: float = 2.1
    texture_scale: float = 1.0
    object_size: float = 0.5

    def __post_init__(self):
        for name in ("wall_height", "door_height", "window_sill", "window_top", "texture_scale", "object_size"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.wall_thickness < 0:
            raise ValueError("wall_thickness must be non-negative")
        if not self.door_height < self.wall_height:
            raise ValueError("door_height must be below wall_height")
        if not self.window_sill < self.window_top <= self.wall_height:
            raise ValueError("window must satisfy sill < top <= wall_height")


@dataclass
class SurfaceMesh:
    vertices: np.ndarray  # (n, 3) metres
    faces: np.ndarray  # (m, 3) vertex indices
    uvs: np.ndarray  # (n, 2) texture-tile units

    def area(self) -> float:
        v = self.vertices[self.faces]
        return float(0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1).sum())

    def normals(self) -> np.ndarray:
        v = self.vertices[self.faces]
        n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)


@dataclass
class Placeholder:
    label: str
    center: tuple[float, float, float]
    size: tuple[float, float, float]


@dataclass
class SceneMesh:
    house_id: str
    surfaces: dict  # (room_id, SurfaceKind) -> SurfaceMesh
    placeholders: list = field(default_factory=list)
    textures: dict = field(default_factory=dict)  # (room_id, SurfaceKind) -> TextureSample

    def material(self, key) -> str:
        room_id, kind = key
        return f"room{room_id}_{kind.value}"

    @property
    def vertex_count(self) -> int:
        return sum(len(m.vertices) for m in self.surfaces.values())

    def unbound(self) -> list:
        return [k for k in self.surfaces if k not in self.textures]


# ---------------------------------------------------------------- geometry


def _polygon_metres(room, scale):
    return [(x * scale, y * scale) for x, y in room.polygon]


def _triangulate(poly_xy, room_id) -> tuple[np.ndarray, np.ndarray]:
    poly = Polygon(poly_xy)
    if not poly.is_valid:
        raise GeometryError(f"room {room_id}: polygon is not simple")
    pts = np.asarray(poly_xy, dtype=np.float64)
    lookup = {(round(x, 9), round(y, 9)): i for i, (x, y) in enumerate(poly_xy)}
    faces = []
    for tri in shapely.constrained_delaunay_triangles(poly).geoms:
        coords = list(tri.exterior.coords)[:3]
        try:
            idx = [lookup[(round(x, 9), round(y, 9))] for x, y in coords]
        except KeyError as e:
            raise GeometryError(f"room {room_id}: triangulation introduced a new vertex") from e
        a, b, c = pts[idx]
        if (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]) < 0:
            idx = [idx[0], idx[2], idx[1]]
        faces.append(idx)
    faces.sort()
    return pts, np.asarray(faces, dtype=np.int64)


def _horizontal(pts, faces, z, scale, facing_up) -> SurfaceMesh:
    verts = np.column_stack([pts, np.full(len(pts), z)])
    f = faces if facing_up else faces[:, ::-1]
    return SurfaceMesh(verts, f.copy(), pts / scale)


def _opening_span(opening, p0, p1, params):
    """Parametric (t0, t1, z0, z1) of an opening on segment p0->p1, or None."""
    d = p1 - p0
    length = np.linalg.norm(d)
    u = d / length
    normal = np.array([-u[1], u[0]])
    ts = []
    for q in opening.wall:
        q = np.asarray(q)
        if abs(np.dot(q - p0, normal)) > ON_WALL_TOL:
            return None
        ts.append(float(np.dot(q - p0, u)))
    t0, t1 = sorted(ts)
    if t0 < -ON_WALL_TOL or t1 > length + ON_WALL_TOL or t1 - t0 <= ON_WALL_TOL:
        return None
    t0, t1 = max(t0, 0.0), min(t1, length)
    if opening.kind == "door":
        return (t0, t1, 0.0, params.door_height)
    return (t0, t1, params.window_sill, params.window_top)


def _scaled_opening(op, scale):
    return replace(op, wall=tuple((x * scale, y * scale) for x, y in op.wall))


def _wall_cells(length, height, holes):
    """Split the wall rectangle into axis-aligned cells that avoid every hole."""
    tb = sorted({0.0, length, *(h[0] for h in holes), *(h[1] for h in holes)})
    zb = sorted({0.0, height, *(h[2] for h in holes), *(h[3] for h in holes)})
    cells = []
    for ta, tb_ in zip(tb, tb[1:]):
        for za, zb_ in zip(zb, zb[1:]):
            tm, zm = (ta + tb_) / 2, (za + zb_) / 2
            if any(h[0] < tm < h[1] and h[2] < zm < h[3] for h in holes):
                continue
            cells.append((ta, tb_, za, zb_))
    return cells


def build_mesh(house: House, params: MeshParams | None = None) -> SceneMesh:
    """Floors and ceilings from the triangulated room polygons, walls extruded
    from every boundary segment with rectangular holes for openings.

    Walls are zero-thickness quads facing into their room, so a wall shared by
    two rooms is emitted once per side. UVs are planar, in texture repeats.
    """
    params = params or MeshParams()
    h = params.wall_height
    ts = params.texture_scale
    surfaces = {}
    openings_m = [_scaled_opening(op, house.scale) for op in house.openings]
    placed = [False] * len(house.openings)
    for room in house.rooms:
        poly = _polygon_metres(room, house.scale)
        pts, faces = _triangulate(poly, room.id)
        surfaces[(room.id, SurfaceKind.FLOOR)] = _horizontal(pts, faces, 0.0, ts, True)
        surfaces[(room.id, SurfaceKind.CEILING)] = _horizontal(pts, faces, h, ts, False)

        verts, uvs, tris = [], [], []
        n = len(pts)
        for i in range(n):
            p0, p1 = pts[i], pts[(i + 1) % n]
            length = float(np.linalg.norm(p1 - p0))
            if length <= 0:
                continue
            u = (p1 - p0) / length
            holes = []
            for j, op in enumerate(house.openings):
                if op.room_ids and room.id not in op.room_ids:
                    continue
                span = _opening_span(openings_m[j], p0, p1, params)
                if span is not None:
                    holes.append(span)
                    placed[j] = True
            for ta, tb, za, zb in _wall_cells(length, h, holes):
                base = len(verts)
                for t, z in ((ta, za), (tb, za), (tb, zb), (ta, zb)):
                    xy = p0 + u * t
                    verts.append((xy[0], xy[1], z))
                    uvs.append((t / ts, z / ts))
                # CCW room: interior on the left, so wind to face left of u
                tris.append((base, base + 2, base + 1))
                tris.append((base, base + 3, base + 2))
        surfaces[(room.id, SurfaceKind.WALL)] = SurfaceMesh(
            np.asarray(verts, dtype=np.float64).reshape(-1, 3),
            np.asarray(tris, dtype=np.int64).reshape(-1, 3),
            np.asarray(uvs, dtype=np.float64).reshape(-1, 2),
        )

    for j, op in enumerate(house.openings):
        if not placed[j]:
            raise PlacementError(f"opening {j} ({op.kind}) does not lie on any room wall")
        if op.room_ids:
            for rid in op.room_ids:
                room = house.room(rid)
                poly = np.asarray(_polygon_metres(room, house.scale))
                if not any(
                    _opening_span(openings_m[j], poly[i], poly[(i + 1) % len(poly)], params) is not None
                    for i in range(len(poly))
                ):
                    raise PlacementError(f"opening {j} ({op.kind}) does not lie on a wall of room {rid}")

    placeholders = []
    s = params.object_size
    for i, obj in enumerate(house.objects):
        x, y = obj.position[0] * house.scale, obj.position[1] * house.scale
        placeholders.append(Placeholder(f"object{i}_{obj.category}", (x, y, s / 2), (s, s, s)))
    return SceneMesh(house.id, surfaces, placeholders)


def assign_textures(mesh: SceneMesh, textures: dict) -> SceneMesh:
    """Bind one texture per (room, surface kind) material slot."""
    missing = [k for k in mesh.surfaces if k not in textures]
    if missing:
        raise CoverageError(sorted(missing, key=lambda k: (k[0], k[1].index)))
    return replace(mesh, textures={k: textures[k] for k in mesh.surfaces})


# ---------------------------------------------------------------- export


def _fmt(values) -> str:
    return " ".join(f"{v:.6f}" for v in values)


def _box(center, size):
    cx, cy, cz = center
    hx, hy, hz = (s / 2 for s in size)
    corners = np.array([[cx + sx * hx, cy + sy * hy, cz + sz * hz] for sz in (-1, 1) for sy in (-1, 1) for sx in (-1, 1)])
    quads = [(0, 2, 3, 1), (4, 5, 7, 6), (0, 1, 5, 4), (2, 6, 7, 3), (0, 4, 6, 2), (1, 3, 7, 5)]
    faces = [(a, b, c) for q in quads for a, b, c in ((q[0], q[1], q[2]), (q[0], q[2], q[3]))]
    return corners, faces


def write_obj(mesh: SceneMesh, path, mtl_name="scene.mtl") -> None:
    lines = ["# floorplan scene", f"mtllib {mtl_name}"]
    v_off = vt_off = 0
    keys = sorted(mesh.surfaces, key=lambda k: (k[0], k[1].index))
    for key in keys:
        sm = mesh.surfaces[key]
        name = mesh.material(key)
        lines.append(f"o {name}")
        lines.extend(f"v {_fmt(v)}" for v in sm.vertices)
        lines.extend(f"vt {_fmt(t)}" for t in sm.uvs)
        lines.append(f"usemtl {name}")
        for f in sm.faces + 1:
            a, b, c = (int(x) for x in f)
            lines.append(f"f {a + v_off}/{a + vt_off} {b + v_off}/{b + vt_off} {c + v_off}/{c + vt_off}")
        v_off += len(sm.vertices)
        vt_off += len(sm.uvs)
    for ph in mesh.placeholders:
        corners, faces = _box(ph.center, ph.size)
        lines.append(f"o {ph.label}")
        lines.extend(f"v {_fmt(v)}" for v in corners)
        lines.append("usemtl placeholder")
        lines.extend(f"f {a + 1 + v_off} {b + 1 + v_off} {c + 1 + v_off}" for a, b, c in faces)
        v_off += len(corners)
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> dict:
    """Minimal OBJ reader returning vertices, uvs and per-object face lists."""
    verts, uvs, objects = [], [], {}
    current = None
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "vt":
            uvs.append([float(x) for x in parts[1:3]])
        elif parts[0] == "o":
            current = parts[1]
            objects[current] = []
        elif parts[0] == "f":
            objects.setdefault(current, []).append([int(p.split("/")[0]) - 1 for p in parts[1:]])
    return {"vertices": np.asarray(verts), "uvs": np.asarray(uvs), "objects": objects}


def export_scene(mesh: SceneMesh, out_dir, format: str = "obj") -> list[Path]:
    """Write ``scene.obj``, ``scene.mtl``, one PNG per material and ``scene.json``."""
    if format != "obj":
        raise ValueError(f"unsupported export format {format!r}")
    missing = mesh.unbound()
    if missing:
        raise CoverageError(missing)
    out = Path(out_dir)
    try:
        (out / "textures").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot write scene to {out}: {e}") from e
    keys = sorted(mesh.surfaces, key=lambda k: (k[0], k[1].index))
    written = []
    mtl = []
    manifest = []
    for key in keys:
        name = mesh.material(key)
        tex = mesh.textures[key]
        rel = f"textures/{name}.png"
        Image.fromarray(np.round(np.clip(tex.image, 0, 1) * 255).astype(np.uint8)).save(out / rel)
        written.append(out / rel)
        mtl += [f"newmtl {name}", "Ka 1.000000 1.000000 1.000000", "Kd 1.000000 1.000000 1.000000", f"map_Kd {rel}", ""]
        manifest.append(
            {
                "room": key[0],
                "surface": key[1].value,
                "material": name,
                "texture": rel,
                "provenance": tex.provenance,
                "seamless": bool(tex.seamless),
                "substance": tex.substance,
            }
        )
    if mesh.placeholders:
        mtl += ["newmtl placeholder", "Kd 0.700000 0.700000 0.700000", ""]
    (out / "scene.mtl").write_text("\n".join(mtl))
    write_obj(mesh, out / "scene.obj")
    (out / "scene.json").write_text(
        json.dumps(
            {
                "house": mesh.house_id,
                "geometry": "scene.obj",
                "materials": manifest,
                "objects": [{"label": p.label, "center": list(p.center), "size": list(p.size)} for p in mesh.placeholders],
            },
            indent=2,
        )
        + "\n"
    )
    return [out / "scene.obj", out / "scene.mtl", out / "scene.json", *written]


def render_topdown(house: House, textures: dict, px_per_m: float = 40.0, params: MeshParams | None = None) -> np.ndarray:
    """Ceiling-removed orthographic view: floors tiled with their textures, walls drawn dark."""
    from PIL import ImageDraw

    params = params or MeshParams()
    polys = {r.id: np.asarray(_polygon_metres(r, house.scale)) for r in house.rooms}
    allpts = np.concatenate(list(polys.values()))
    lo, hi = allpts.min(0) - 0.25, allpts.max(0) + 0.25
    w, h = (np.ceil((hi - lo) * px_per_m).astype(int) + 1).tolist()
    xs = lo[0] + (np.arange(w) + 0.5) / px_per_m
    ys = hi[1] - (np.arange(h) + 0.5) / px_per_m
    gx, gy = np.meshgrid(xs, ys)
    canvas = np.ones((h, w, 3), dtype=np.float32)
    for rid, poly in polys.items():
        inside = shapely.contains_xy(Polygon(poly), gx, gy)
        tex = textures.get((rid, SurfaceKind.FLOOR))
        if tex is None:
            canvas[inside] = 0.8
            continue
        img = np.asarray(tex.image)
        th, tw = img.shape[:2]
        u = np.mod(gx[inside] / params.texture_scale, 1.0)
        v = np.mod(gy[inside] / params.texture_scale, 1.0)
        canvas[inside] = img[((1 - v) * th).astype(int) % th, (u * tw).astype(int) % tw]
    im = Image.fromarray(np.round(canvas * 255).astype(np.uint8))
    draw = ImageDraw.Draw(im)
    for poly in polys.values():
        pix = [((x - lo[0]) * px_per_m, (hi[1] - y) * px_per_m) for x, y in poly]
        draw.line(pix + pix[:1], fill=(40, 40, 40), width=max(2, int(px_per_m / 10)))
    return np.asarray(im)
