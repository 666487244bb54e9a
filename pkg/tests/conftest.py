import json
import shutil
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from housetex import data as D
from housetex.crops import OracleBackend, extract_house_crops
from housetex.fixtures import make_dataset, make_texture_dataset, stationary_texture
from housetex.synth.model import SUBSTANCES, SynthConfig
from housetex.synth.train import TextureExemplar, load_texture_dataset, train_synth

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"

torch.set_num_threads(1)


@pytest.fixture
def two_room_dict():
    return json.loads((FIXTURES / "two_room.json").read_text())


@pytest.fixture
def two_room(two_room_dict):
    return D.house_from_dict(two_room_dict)


@pytest.fixture(scope="session")
def dataset_root(tmp_path_factory):
    """Rendered houses with extracted crops under ``<root>/houses`` and ``<root>/crops``."""
    root = tmp_path_factory.mktemp("dataset")
    ids = make_dataset(root, n_houses=4, seed=0)
    backend = OracleBackend()
    for hid in ids:
        house = D.load_house(root / "houses" / f"{hid}.json")
        D.save_crops(root / "crops", hid, extract_house_crops(house, backend, seed=0))
    return root


@pytest.fixture(scope="session")
def houses(dataset_root):
    return {hid: D.load_house(dataset_root / "houses" / f"{hid}.json", dataset_root / "crops")
            for hid in D.list_houses(dataset_root / "houses")}


@pytest.fixture(scope="session")
def texture_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("textures")
    make_texture_dataset(root, per_class=2, size=256, seed=0)
    return root


@pytest.fixture(scope="session")
def exemplars(texture_root):
    return load_texture_dataset(texture_root)


@pytest.fixture(scope="session")
def quick_synth(exemplars):
    """A briefly trained synthesiser for plumbing tests."""
    return train_synth(exemplars, SynthConfig(steps=30, log_every=0, seed=0))


@pytest.fixture(scope="session")
def quick_naive(exemplars):
    cfg = SynthConfig(steps=10, log_every=0, seed=0, hsv_separation=False, substance_branch=False)
    return train_synth(exemplars, cfg)


@pytest.fixture(scope="session")
def overfit_items():
    """Eight stationary exemplars, two per substance."""
    return [
        TextureExemplar(stationary_texture(s, 256, seed=i * 10 + j), s, f"{s}{j}")
        for i, s in enumerate(SUBSTANCES)
        for j in range(2)
    ]


@pytest.fixture(scope="session")
def overfit_synth(overfit_items, tmp_path_factory):
    """Full-length training run on the eight exemplars, shared by every test that needs a fitted model."""
    ckpt = tmp_path_factory.mktemp("ckpt") / "overfit.pt"
    t0 = time.perf_counter()
    model = train_synth(overfit_items, SynthConfig(steps=2000, log_every=0, seed=0), checkpoint=ckpt)
    model.fit_seconds = time.perf_counter() - t0
    return model


@pytest.fixture(scope="session")
def classifier(exemplars):
    from housetex.metrics import train_classifier

    return train_classifier(exemplars, steps=300, seed=0)


@pytest.fixture(scope="session")
def extractor():
    from housetex.metrics import InceptionFeatures

    return InceptionFeatures(seed=0, resolution=299)


def toy_graph_examples(seed=0, n_houses=4, keep=0.7):
    """Random houses whose observed surfaces carry random embeddings."""
    from housetex.fixtures import random_house_spec
    from housetex.graph import make_example
    from housetex.synth.model import TextureEmbedding

    rng = np.random.default_rng(seed)
    examples = []
    for h in range(n_houses):
        house = D.house_from_dict(random_house_spec(f"h{h}", rng))
        emb = {}
        for r in house.rooms:
            for k in D.SURFACE_KINDS:
                if rng.random() < keep:
                    emb[(r.id, k)] = TextureEmbedding(rng.normal(size=8), rng.random(3))
        examples.append(make_example(house, emb))
    return examples


@pytest.fixture(scope="session")
def toy_examples():
    return toy_graph_examples()


@pytest.fixture(scope="session")
def toy_gnn(toy_examples):
    from housetex.graph import GNNConfig, train_gnn

    t0 = time.perf_counter()
    model = train_gnn(toy_examples, GNNConfig(epochs=1500, log_every=0), val_examples=toy_examples)
    model.fit_seconds = time.perf_counter() - t0
    return model


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
