import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from housetex.fixtures import stationary_texture
from housetex.metrics import metric_color
from housetex.synth.model import TextureSample
from housetex.synth.seamless import circular_min_cut, is_seamless, make_seamless, seam_energy


def _sample(img):
    return TextureSample(img, "propagated")


def brute_force_cut(err):
    L, M = err.shape
    best = np.inf
    for start in range(M):
        for moves in itertools.product((-1, 0, 1), repeat=L - 1):
            cols = np.cumsum([start, *moves])
            if cols.min() < 0 or cols.max() >= M or abs(cols[-1] - cols[0]) > 1:
                continue
            best = min(best, err[np.arange(L), cols].sum())
    return best


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 6), st.integers(1, 5)), elements=st.floats(0, 10)))
def test_circular_min_cut_matches_brute_force(err):
    path, cost = circular_min_cut(err)
    assert cost == pytest.approx(brute_force_cut(err), abs=1e-9)
    assert np.all(np.abs(np.diff(path)) <= 1) and abs(path[-1] - path[0]) <= 1
    assert err[np.arange(len(path)), path].sum() == pytest.approx(cost, abs=1e-9)


def test_periodic_grating_unchanged():
    y, x = np.mgrid[0:128, 0:128]
    g = 0.5 + 0.4 * np.sin(2 * np.pi * (3 * x + 2 * y) / 128)
    img = np.repeat(g[..., None], 3, axis=2)
    out = make_seamless(_sample(img))
    assert np.sqrt(np.mean((out.image - img) ** 2)) < 1e-3
    assert out.seamless and not out.seam_warning


def test_white_noise_meets_seam_bound():
    img = np.random.default_rng(0).random((128, 128, 3))
    out = make_seamless(_sample(img)).image
    seam, inner = seam_energy(out)
    assert seam <= 1.1 * inner


def test_constant_image_unchanged():
    img = np.full((128, 128, 3), 0.3)
    out = make_seamless(_sample(img))
    assert np.array_equal(out.image, _sample(img).image)


@pytest.mark.parametrize("substance", ["wood", "plaster", "carpet", "tile"])
def test_crops_of_larger_textures_become_seamless(substance):
    img = stationary_texture(substance, 256, seed=4)[:128, :128]
    assert not is_seamless(img)
    out = make_seamless(_sample(img))
    assert is_seamless(out.image)
    assert not out.seam_warning
    assert metric_color(img, out.image) < 0.15


def test_idempotent():
    img = stationary_texture("wood", 256, seed=1)[:128, :128]
    once = make_seamless(_sample(img))
    twice = make_seamless(once)
    assert np.array_equal(once.image, twice.image)


def test_output_pixels_come_from_input():
    img = np.random.default_rng(3).random((64, 64, 3)).astype(np.float32)
    img[:, :32] += 0.2 * np.linspace(0, 1, 32)[None, :, None].astype(np.float32)
    img = np.clip(img, 0, 1)
    out = make_seamless(_sample(img)).image
    pixels = {tuple(p) for p in img.reshape(-1, 3)}
    assert all(tuple(p) in pixels for p in out.reshape(-1, 3))
