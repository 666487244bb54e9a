from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import Polygon

from housetex import data as D
from housetex import mesh as M
from housetex.data import SurfaceKind
from housetex.errors import CoverageError, GeometryError, PlacementError
from housetex.synth.model import TextureSample

GOLDEN = Path(__file__).parent / "golden" / "two_room.obj"


def _textures(mesh, value=0.5):
    return {k: TextureSample(np.full((8, 8, 3), value), "propagated") for k in mesh.surfaces}


def test_two_room_wall_areas(two_room):
    mesh = M.build_mesh(two_room)
    # perimeter * height minus the door (0.9 x 2.0) on both sides and the window (1.2 x 1.2) in room 0
    assert mesh.surfaces[(0, SurfaceKind.WALL)].area() == pytest.approx(40 - 1.8 - 1.44, abs=1e-6)
    assert mesh.surfaces[(1, SurfaceKind.WALL)].area() == pytest.approx(35 - 1.8, abs=1e-6)


def test_floor_and_ceiling_areas(two_room):
    mesh = M.build_mesh(two_room)
    for rid, area in ((0, 16.0), (1, 12.0)):
        assert mesh.surfaces[(rid, SurfaceKind.FLOOR)].area() == pytest.approx(area)
        assert mesh.surfaces[(rid, SurfaceKind.CEILING)].area() == pytest.approx(area)


def test_normals_face_into_the_room(two_room):
    mesh = M.build_mesh(two_room)
    for rid in (0, 1):
        centroid = np.asarray(Polygon(two_room.room(rid).polygon).centroid.coords[0])
        assert np.allclose(mesh.surfaces[(rid, SurfaceKind.FLOOR)].normals(), [0, 0, 1])
        assert np.allclose(mesh.surfaces[(rid, SurfaceKind.CEILING)].normals(), [0, 0, -1])
        wall = mesh.surfaces[(rid, SurfaceKind.WALL)]
        tri_centres = wall.vertices[wall.faces].mean(axis=1)
        to_centre = centroid - tri_centres[:, :2]
        assert np.all(np.sum(wall.normals()[:, :2] * to_centre, axis=1) > 0)


def test_golden_obj(two_room, tmp_path):
    mesh = M.build_mesh(two_room)
    M.write_obj(mesh, tmp_path / "scene.obj")
    assert (tmp_path / "scene.obj").read_text() == GOLDEN.read_text()


def test_export_reimport(two_room, tmp_path):
    mesh = M.assign_textures(M.build_mesh(two_room), _textures(M.build_mesh(two_room)))
    files = M.export_scene(mesh, tmp_path)
    assert all(f.exists() for f in files)
    back = M.read_obj(tmp_path / "scene.obj")
    assert len(back["vertices"]) == mesh.vertex_count
    assert set(back["objects"]) == {mesh.material(k) for k in mesh.surfaces}
    for key, sm in mesh.surfaces.items():
        assert len(back["objects"][mesh.material(key)]) == len(sm.faces)
    mtl = (tmp_path / "scene.mtl").read_text()
    assert mtl.count("newmtl") == len(mesh.surfaces)


def test_export_requires_every_texture(two_room, tmp_path):
    mesh = M.build_mesh(two_room)
    textures = _textures(mesh)
    del textures[(1, SurfaceKind.CEILING)]
    with pytest.raises(CoverageError) as e:
        M.assign_textures(mesh, textures)
    assert e.value.missing == [(1, SurfaceKind.CEILING)]
    with pytest.raises(CoverageError):
        M.export_scene(mesh, tmp_path)


def test_opening_off_any_wall(two_room_dict):
    two_room_dict["openings"].append({"wall": [[2, 2], [2.5, 2]], "kind": "window"})
    with pytest.raises(PlacementError):
        M.build_mesh(D.house_from_dict(two_room_dict))


def test_opening_on_wrong_room(two_room_dict):
    two_room_dict["openings"][1]["roomIds"] = [1]
    with pytest.raises(PlacementError):
        M.build_mesh(D.house_from_dict(two_room_dict))


def test_self_intersecting_polygon(two_room_dict):
    two_room_dict["rooms"][0]["polygon"] = [[0, 0], [4, 4], [4, 0], [0, 4]]
    two_room_dict["openings"] = []
    try:
        house = D.house_from_dict(two_room_dict)
    except D.ParseError:
        return
    with pytest.raises(GeometryError):
        M.build_mesh(house)


def test_mesh_params_validation():
    with pytest.raises(ValueError):
        M.MeshParams(door_height=3.0)
    with pytest.raises(ValueError):
        M.MeshParams(window_sill=2.0, window_top=1.0)


def test_placeholders_for_objects(two_room_dict):
    two_room_dict["objects"] = [{"category": "bed", "position": [1, 1]}]
    mesh = M.build_mesh(D.house_from_dict(two_room_dict))
    assert mesh.placeholders[0].label == "object0_bed"
    assert mesh.placeholders[0].center == (1.0, 1.0, 0.25)


def test_topdown_shape(two_room):
    mesh = M.build_mesh(two_room)
    img = M.render_topdown(two_room, _textures(mesh, 0.2), px_per_m=20)
    assert img.ndim == 3 and img.dtype == np.uint8
    assert img.shape[1] > img.shape[0]  # 7 m wide, 4 m deep


@settings(max_examples=40, deadline=None)
@given(
    w=st.floats(1.0, 10.0),
    d=st.floats(1.0, 10.0),
    height=st.floats(2.2, 4.0),
)
def test_box_room_areas(w, d, height):
    house = D.house_from_dict(
        {"id": "b", "rooms": [{"id": 0, "category": "bedroom", "polygon": [[0, 0], [w, 0], [w, d], [0, d]]}]}
    )
    mesh = M.build_mesh(house, M.MeshParams(wall_height=height))
    assert mesh.surfaces[(0, SurfaceKind.WALL)].area() == pytest.approx(2 * (w + d) * height, rel=1e-9)
    assert mesh.surfaces[(0, SurfaceKind.FLOOR)].area() == pytest.approx(w * d, rel=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(0.5, 3.0), st.floats(0.5, 3.0)), min_size=2, max_size=5))
def test_l_shaped_floor_area_matches_polygon(steps):
    # staircase polygon, always simple
    pts = [(0.0, 0.0)]
    x = y = 0.0
    for dx, dy in steps:
        x += dx
        pts.append((x, y))
        y += dy
        pts.append((x, y))
    pts.append((0.0, y))
    house = D.house_from_dict({"id": "s", "rooms": [{"id": 0, "category": "kitchen", "polygon": [list(p) for p in pts]}]})
    mesh = M.build_mesh(house)
    assert mesh.surfaces[(0, SurfaceKind.FLOOR)].area() == pytest.approx(Polygon(pts).area, rel=1e-9)
