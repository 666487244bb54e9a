import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from housetex import data as D
from housetex import graph as G
from housetex.data import SurfaceKind
from housetex.errors import ModelError
from housetex.synth.model import TextureEmbedding


def _emb(seed):
    rng = np.random.default_rng(seed)
    return TextureEmbedding(rng.normal(size=8), rng.random(3))


def _untrained(seed=0):
    torch.manual_seed(seed)
    model = G.GatedGraphNet()
    model.trained = True
    return model


def test_feature_dimension():
    assert G.GAMMA == 12
    assert G.FEATURE_DIM == 12 + 3 * (11 + 1) == 48
    assert G.OUTPUT_DIM == 33


def test_default_hyperparameters():
    cfg = G.GNNConfig()
    assert (cfg.weight_decay, cfg.batch_size, cfg.lr) == (0.0001, 32, 0.0005)
    assert (cfg.hidden, cfg.steps) == (64, 3)


def test_build_graph_layout(two_room):
    g = G.build_graph(two_room, {(0, SurfaceKind.FLOOR): _emb(0), (1, SurfaceKind.WALL): _emb(1)})
    assert g.features.shape == (2, 48)
    assert g.edges == ((0, 1),)
    assert g.features[0, D.ROOM_TYPES.index("bedroom")] == 1
    assert g.presence(0, "floor") == 1 and g.presence(0, "wall") == 0
    assert g.embedding(1, "wall") == _emb(1)
    assert g.embedding(0, "ceiling") is None
    assert g.edge_index().tolist() == [[0, 1], [1, 0]]


def test_nonzero_absent_cell_rejected(two_room):
    g = G.build_graph(two_room, {})
    feats = g.features.copy()
    feats[0, G._cell("floor")] = 1.0
    with pytest.raises(ValueError):
        G.RoomGraph(g.house_id, g.room_ids, feats, g.edges, g.observed)


def test_forward_rejects_wrong_width():
    with pytest.raises(ValueError):
        G.GatedGraphNet()(torch.zeros(2, 40), torch.zeros(2, 0, dtype=torch.long))


def test_untrained_propagate_refuses(two_room):
    with pytest.raises(ModelError):
        G.propagate(G.build_graph(two_room, {}), G.GatedGraphNet())


def test_fully_observed_passes_through(two_room):
    embs = {(r, k): _emb(10 * r + k.index) for r in (0, 1) for k in D.SURFACE_KINDS}
    out = G.propagate(G.build_graph(two_room, embs), _untrained())
    assert all(out[key] == embs[key] for key in embs)


def test_single_node_prediction_is_local():
    house = D.house_from_dict({"id": "s", "rooms": [{"id": 0, "category": "kitchen", "polygon": [[0, 0], [2, 0], [2, 2]]}]})
    g = G.build_graph(house, {(0, SurfaceKind.WALL): _emb(3)})
    out = G.propagate(g, _untrained())
    assert np.isfinite(out[(0, SurfaceKind.FLOOR)].vector).all()
    assert out[(0, SurfaceKind.WALL)] == _emb(3)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_permutation_equivariance(seed):
    from conftest import toy_graph_examples

    g = toy_graph_examples(seed, n_houses=1)[0].graph
    rng = np.random.default_rng(seed)
    perm = rng.permutation(g.num_nodes)
    inv = np.argsort(perm)
    edges = tuple(sorted((min(inv[a], inv[b]), max(inv[a], inv[b])) for a, b in g.edges))
    gp = G.RoomGraph(g.house_id, tuple(g.room_ids[i] for i in perm), g.features[perm], edges, g.observed[perm])
    model = _untrained(seed % 7)
    a, b = G.predict(g, model), G.predict(gp, model)
    assert np.abs(a[perm] - b).max() < 1e-6


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_mask_augment_hides_exactly_k(seed):
    from conftest import toy_graph_examples

    g = toy_graph_examples(seed % 5, n_houses=1)[0].graph
    n = len(g.observed_surfaces())
    k = seed % (n + 1)
    m = G.mask_augment(g, k, seed)
    hidden = set(g.observed_surfaces()) - set(m.observed_surfaces())
    assert len(hidden) == k and set(m.observed_surfaces()) <= set(g.observed_surfaces())
    for rid, kind in hidden:
        assert m.presence(rid, kind) == 0 and m.embedding(rid, kind) is None
    assert G.mask_augment(g, k, seed).features.tobytes() == m.features.tobytes()


def test_mask_augment_range(two_room):
    g = G.build_graph(two_room, {(0, SurfaceKind.FLOOR): _emb(0)})
    with pytest.raises(ValueError):
        G.mask_augment(g, 2)


def test_priors_fill_photo_less_house(two_room, toy_examples):
    priors = G.embedding_priors(toy_examples)
    g = G.build_graph(two_room, {}, priors)
    assert g.observed.sum() == 0
    assert all(g.presence(r, k) == 1 for r in (0, 1) for k in D.SURFACE_KINDS)


def test_priors_are_means(toy_examples):
    priors = G.embedding_priors(toy_examples)
    for kind in D.SURFACE_KINDS:
        vecs = [e.vector for ex in toy_examples for (r, k), e in ex.targets.items() if k == kind]
        assert np.allclose(priors[(None, kind)].vector, np.mean(vecs, axis=0))


def test_training_instances_mask_the_target(toy_examples):
    inst = G.training_instances(toy_examples, np.random.default_rng(0), 0)
    assert len(inst) == sum(len(ex.targets) for ex in toy_examples)
    for g, node, kind, _ in inst:
        assert not g.observed[node, kind]


def test_seeded_training_reproducible(toy_examples):
    cfg = G.GNNConfig(epochs=3, log_every=0)
    a, b = G.train_gnn(toy_examples, cfg), G.train_gnn(toy_examples, cfg)
    assert a.history == b.history


def test_toy_overfit(toy_gnn, toy_examples):
    inst = G.training_instances(toy_examples, np.random.default_rng(0), 0)
    assert G.masked_l1(toy_gnn, inst) < 0.02
    val = [h["val_l1"] for h in toy_gnn.history]
    assert val[0] / min(val) >= 5


def test_checkpoint_round_trip(toy_gnn, toy_examples, tmp_path):
    toy_gnn.save(tmp_path / "g.pt")
    back = G.GatedGraphNet.load(tmp_path / "g.pt")
    g = toy_examples[0].graph
    assert np.array_equal(G.predict(g, back), G.predict(g, toy_gnn))
    assert back.priors.keys() == toy_gnn.priors.keys()


def test_graph_dump(two_room, tmp_path):
    import json

    g = G.build_graph(two_room, {(0, SurfaceKind.FLOOR): _emb(0)})
    g.dump(tmp_path / "g.json")
    data = json.loads((tmp_path / "g.json").read_text())
    assert data["edges"] == [[0, 1]] and len(data["features"][0]) == 48
