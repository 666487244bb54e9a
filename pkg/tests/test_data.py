import dataclasses
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from housetex import data as D
from housetex.data import SurfaceKind
from housetex.errors import IntegrityError, ParseError


def test_two_room_parses(two_room):
    assert two_room.room_ids == [0, 1]
    assert two_room.room(0).category == "bedroom"
    assert two_room.door_edges() == [(0, 1)]
    assert len(two_room.surfaces) == 6
    assert two_room.unobserved_surfaces == two_room.surfaces  # no crops attached


def test_missing_field_names_the_field(two_room_dict):
    del two_room_dict["rooms"][1]["polygon"]
    with pytest.raises(ParseError) as e:
        D.house_from_dict(two_room_dict)
    assert e.value.field == "rooms[1].polygon"


def test_unknown_room_type_rejected(two_room_dict):
    two_room_dict["rooms"][0]["category"] = "garage"
    with pytest.raises(ParseError) as e:
        D.house_from_dict(two_room_dict)
    assert e.value.field == "rooms[0].category"


def test_clockwise_polygon_is_reoriented(two_room_dict):
    two_room_dict["rooms"][0]["polygon"] = two_room_dict["rooms"][0]["polygon"][::-1]
    house = D.house_from_dict(two_room_dict)
    assert D._signed_area(list(house.room(0).polygon)) > 0


def test_one_sided_door_becomes_symmetric(two_room_dict):
    two_room_dict["rooms"][1]["doors"] = []
    two_room_dict["openings"] = []
    house = D.house_from_dict(two_room_dict)
    assert house.room(1).doors == (0,)


def test_door_opening_implies_link(two_room_dict):
    for r in two_room_dict["rooms"]:
        r["doors"] = []
    house = D.house_from_dict(two_room_dict)
    assert house.door_edges() == [(0, 1)]


def test_dangling_door_is_integrity_error(two_room_dict):
    two_room_dict["rooms"][0]["doors"] = [7]
    with pytest.raises(IntegrityError):
        D.house_from_dict(two_room_dict)


def test_photo_with_unknown_room(two_room_dict):
    two_room_dict["photos"][0]["roomId"] = 9
    with pytest.raises(IntegrityError):
        D.house_from_dict(two_room_dict)


def test_canonical_json_round_trip(two_room):
    text = D.dumps_house(two_room)
    again = D.house_from_dict(json.loads(text))
    assert D.dumps_house(again) == text
    assert text.endswith("\n")


def test_surface_kind_indexing():
    assert [k.index for k in D.SURFACE_KINDS] == [1, 2, 3]
    assert D.surface_kind(2) is SurfaceKind.WALL
    assert D.surface_kind("ceiling") is SurfaceKind.CEILING


def test_crop_shape_enforced():
    with pytest.raises(ValueError):
        D.SurfaceCrop(np.zeros((64, 64, 3)), "h", 0, "floor")
    crop = D.SurfaceCrop(np.full((128, 128, 3), 2.0), "h", 0, "floor")
    assert crop.image.max() == 1.0 and not crop.image.flags.writeable


def test_crops_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    crops = [
        D.SurfaceCrop(rng.random((128, 128, 3)), "h", 0, "floor", "p0", is_reference=True),
        D.SurfaceCrop(rng.random((128, 128, 3)), "h", 0, "floor", "p0"),
        D.SurfaceCrop(rng.random((128, 128, 3)), "h", 1, "wall", "p1", is_reference=True),
    ]
    D.save_crops(tmp_path, "h", crops)
    back = D.load_crops(tmp_path, "h")
    assert [(c.room_id, c.kind, c.photo_id, c.is_reference) for c in back] == [
        (c.room_id, c.kind, c.photo_id, c.is_reference) for c in crops
    ]
    for a, b in zip(crops, back):
        assert np.abs(a.image - b.image).max() <= 0.5 / 255 + 1e-6


# ---------------------------------------------------------------- splits


def test_split_sizes_largest_remainder():
    train, val, test = D.split_dataset([str(i) for i in range(7)], (0.6, 0.2, 0.2), seed=0)
    # quotas 4.2, 1.4, 1.4 -> floors 4, 1, 1 and the leftover goes to the first largest remainder
    assert (len(train), len(val), len(test)) == (4, 2, 1)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 200), seed=st.integers(0, 2**31))
def test_split_is_a_partition(n, seed):
    ids = [f"h{i}" for i in range(n)]
    parts = D.split_dataset(ids, seed=seed)
    flat = [i for p in parts for i in p]
    assert sorted(flat) == sorted(ids)
    assert D.split_dataset(ids, seed=seed) == parts


def test_split_rejects_bad_ratios():
    with pytest.raises(ValueError):
        D.split_dataset(["a", "b"], (0.5, 0.5, 0.5))


# ---------------------------------------------------------------- held-out photos


def _with_fake_crops(house):
    crops = []
    for p in house.photos:
        for kind in ("floor", "wall"):
            crops.append(D.SurfaceCrop(np.zeros((128, 128, 3)), house.id, p.room_id, kind, p.id))
    return house.with_crops(crops)


@settings(max_examples=30, deadline=None)
@given(fraction=st.floats(0, 1), seed=st.integers(0, 1000), n_photos=st.integers(1, 9))
def test_simulate_unobserved_hides_whole_photos(fraction, seed, n_photos):
    base = json.loads(json.dumps(_TWO_ROOM_BASE))
    base["photos"] = [{"id": f"p{i}", "file": f"p{i}.png", "roomId": i % 2} for i in range(n_photos)]
    house = _with_fake_crops(D.house_from_dict(base))
    reduced, held = D.simulate_unobserved(house, fraction, seed)
    hidden = {p.id for p in house.photos} - {p.id for p in reduced.photos}
    assert len(hidden) == math.floor(fraction * n_photos + 1e-9)
    assert {c.photo_id for c in held} == hidden
    assert all(c.photo_id not in hidden for c in reduced.crops)
    assert len(held) + len(reduced.crops) == len(house.crops)


def test_simulate_unobserved_sixty_percent(two_room_dict):
    two_room_dict["photos"] = [{"id": f"p{i}", "file": f"p{i}.png", "roomId": 0} for i in range(5)]
    house = _with_fake_crops(D.house_from_dict(two_room_dict))
    reduced, _ = D.simulate_unobserved(house, 0.6, seed=3)
    assert len(reduced.photos) == 2


def test_simulate_unobserved_errors(two_room):
    with pytest.raises(ValueError):
        D.simulate_unobserved(two_room, 1.5)
    no_photos = dataclasses.replace(two_room, photos=())
    with pytest.raises(ValueError):
        D.simulate_unobserved(no_photos, 0.5)


_TWO_ROOM_BASE = {
    "id": "t",
    "rooms": [
        {"id": 0, "category": "bedroom", "polygon": [[0, 0], [4, 0], [4, 4], [0, 4]], "doors": [1]},
        {"id": 1, "category": "kitchen", "polygon": [[4, 0], [7, 0], [7, 4], [4, 4]]},
    ],
}
