"""Room-door-room graph and a gated graph network that fills in unobserved surface embeddings."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .data import ROOM_TYPES, SURFACE_KINDS, House, SurfaceKind
from .errors import ModelError, TrainingError
from .synth.model import EMBEDDING_DIM, TextureEmbedding

log = logging.getLogger(__name__)

GAMMA = len(ROOM_TYPES)
CELL = EMBEDDING_DIM + 1
FEATURE_DIM = GAMMA + len(SURFACE_KINDS) * CELL  # 12 + 3 * 12 = 48
OUTPUT_DIM = len(SURFACE_KINDS) * EMBEDDING_DIM  # 33


def _cell(kind) -> slice:
    k = SURFACE_KINDS.index(SurfaceKind(str(kind)))
    start = GAMMA + k * CELL
    return slice(start, start + EMBEDDING_DIM)


def _presence(kind) -> int:
    return _cell(kind).stop


@dataclass(frozen=True, eq=False)
class RoomGraph:
    """One node per room; features are a room-type multi-hot followed by
    (embedding, presence) cells for floor, wall and ceiling.

    ``observed`` marks the cells that hold real observations. It differs from
    the presence cells only when a cell was filled from a prior.
    """

    house_id: str
    room_ids: tuple
    features: np.ndarray  # (N, 48)
    edges: tuple  # undirected (i, j) node-index pairs, i < j
    observed: np.ndarray  # (N, 3) bool

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float64)
        if feats.shape != (len(self.room_ids), FEATURE_DIM):
            raise ValueError(f"features must be ({len(self.room_ids)}, {FEATURE_DIM}), got {feats.shape}")
        for kind in SURFACE_KINDS:
            absent = feats[:, _presence(kind)] == 0
            if np.any(feats[absent, _cell(kind)] != 0):
                raise ValueError(f"{kind} embedding cells must be zero when presence is 0")
        feats.setflags(write=False)
        obs = np.array(self.observed, dtype=bool)
        obs.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "observed", obs)
        object.__setattr__(self, "room_ids", tuple(self.room_ids))
        object.__setattr__(self, "edges", tuple(tuple(e) for e in self.edges))

    @property
    def num_nodes(self) -> int:
        return len(self.room_ids)

    def node(self, room_id) -> int:
        return self.room_ids.index(room_id)

    def presence(self, room_id, kind) -> float:
        return float(self.features[self.node(room_id), _presence(kind)])

    def embedding(self, room_id, kind) -> TextureEmbedding | None:
        i = self.node(room_id)
        if self.features[i, _presence(kind)] == 0:
            return None
        return TextureEmbedding.from_vector(self.features[i, _cell(kind)])

    def observed_surfaces(self) -> list[tuple[int, SurfaceKind]]:
        return [(r, k) for i, r in enumerate(self.room_ids) for j, k in enumerate(SURFACE_KINDS) if self.observed[i, j]]

    def edge_index(self) -> torch.Tensor:
        """Directed (2, 2E) index: each undirected edge in both directions, no self-loops."""
        if not self.edges:
            return torch.zeros(2, 0, dtype=torch.long)
        e = torch.tensor(self.edges, dtype=torch.long).T
        return torch.cat([e, e.flip(0)], dim=1)

    def to_dict(self) -> dict:
        return {
            "house": self.house_id,
            "rooms": list(self.room_ids),
            "edges": [list(e) for e in self.edges],
            "features": self.features.tolist(),
            "observed": self.observed.astype(int).tolist(),
        }

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def room_type_vector(categories) -> np.ndarray:
    v = np.zeros(GAMMA)
    for c in categories:
        v[ROOM_TYPES.index(c)] = 1.0
    return v


def build_graph(house: House, embeddings: dict, priors: dict | None = None) -> RoomGraph:
    """Encode ``house`` as a ``RoomGraph``.

    :param embeddings: (room_id, kind) -> ``TextureEmbedding`` for observed surfaces
    :param priors: optional (room type, kind) -> ``TextureEmbedding`` used to
        initialise every cell when the house has no observed surface at all
    """
    index = {r.id: i for i, r in enumerate(house.rooms)}
    feats = np.zeros((len(house.rooms), FEATURE_DIM))
    observed = np.zeros((len(house.rooms), len(SURFACE_KINDS)), dtype=bool)
    for i, room in enumerate(house.rooms):
        feats[i, :GAMMA] = room_type_vector(room.categories)
    for (rid, kind), emb in embeddings.items():
        if rid not in index:
            raise KeyError(f"embedding for unknown room {rid}")
        i, kind = index[rid], SurfaceKind(str(kind))
        feats[i, _cell(kind)] = emb.vector
        feats[i, _presence(kind)] = 1.0
        observed[i, SURFACE_KINDS.index(kind)] = True
    if not embeddings and priors:
        for i, room in enumerate(house.rooms):
            for kind in SURFACE_KINDS:
                emb = priors.get((room.category, kind)) or priors.get((None, kind))
                if emb is not None:
                    feats[i, _cell(kind)] = emb.vector
                    feats[i, _presence(kind)] = 1.0
    edges = sorted({(min(index[a], index[b]), max(index[a], index[b])) for a, b in house.door_edges()})
    return RoomGraph(house.id, tuple(index), feats, tuple(edges), observed)


def mask_surfaces(graph: RoomGraph, surfaces) -> RoomGraph:
    """Zero the embedding and presence cells of ``surfaces``."""
    feats = graph.features.copy()
    obs = graph.observed.copy()
    for rid, kind in surfaces:
        i = graph.node(rid)
        feats[i, _cell(kind)] = 0.0
        feats[i, _presence(kind)] = 0.0
        obs[i, SURFACE_KINDS.index(SurfaceKind(str(kind)))] = False
    return replace(graph, features=feats, observed=obs)


def mask_augment(graph: RoomGraph, k: int, seed: int = 0) -> RoomGraph:
    """Hide ``k`` observed surfaces chosen uniformly without replacement."""
    obs = graph.observed_surfaces()
    if not 0 <= k <= len(obs):
        raise ValueError(f"cannot mask {k} surfaces, graph has {len(obs)} observed")
    if k == 0:
        return graph
    pick = np.random.default_rng(seed).choice(len(obs), size=k, replace=False)
    return mask_surfaces(graph, [obs[i] for i in sorted(pick)])


# ---------------------------------------------------------------- model


@dataclass
class GNNConfig:
    hidden: int = 64
    steps: int = 3
    lr: float = 5e-4
    weight_decay: float = 1e-4
    batch_size: int = 32
    epochs: int = 200
    max_mask: int = 3
    seed: int = 0
    log_every: int = 10

    @classmethod
    def from_dict(cls, d: dict) -> "GNNConfig":
        return cls(**d)


class GatedGraphNet(nn.Module):
    """Linear input projection, GRU-updated message passing with summed
    neighbour messages, and a linear head giving 3 x 11 values per node."""

    def __init__(self, config: GNNConfig | None = None):
        super().__init__()
        self.config = config or GNNConfig()
        h = self.config.hidden
        self.pre = nn.Linear(FEATURE_DIM, h)
        self.message = nn.Linear(h, h)
        self.gru = nn.GRUCell(h, h)
        self.post = nn.Linear(h, OUTPUT_DIM)
        self.trained = False
        self.priors: dict = {}
        self.history: list[dict] = []

    def forward(self, x: torch.Tensor, edge_index: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != FEATURE_DIM:
            raise ValueError(f"node features must have {FEATURE_DIM} columns, got {x.shape[-1]}")
        h = self.pre(x)
        src, dst = edge_index
        for _ in range(self.config.steps):
            m = self.message(h)
            agg = torch.zeros_like(h).index_add_(0, dst, m[src])
            h = self.gru(agg, h)
        return self.post(h)

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        torch.save(
            {
                "kind": "gnn",
                "config": asdict(self.config),
                "state_dict": self.state_dict(),
                "trained": self.trained,
                "priors": {f"{c}|{k}": e.vector.tolist() for (c, k), e in self.priors.items()},
                "history": self.history,
            },
            path,
        )

    @classmethod
    def load(cls, path) -> "GatedGraphNet":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        blob = torch.load(path, map_location="cpu", weights_only=False)
        if blob.get("kind") != "gnn":
            raise ModelError(f"{path} is not a propagation checkpoint")
        model = cls(GNNConfig.from_dict(blob["config"]))
        model.load_state_dict(blob["state_dict"])
        model.trained = blob["trained"]
        model.history = blob["history"]
        priors = {}
        for key, vec in blob["priors"].items():
            cat, kind = key.split("|")
            priors[(None if cat == "None" else cat, SurfaceKind(kind))] = TextureEmbedding.from_vector(vec)
        model.priors = priors
        model.eval()
        return model


def predict(graph: RoomGraph, model: GatedGraphNet) -> np.ndarray:
    """Raw (N, 3, 11) model output."""
    if graph.features.shape[1] != FEATURE_DIM:
        raise ValueError(f"graph features have {graph.features.shape[1]} columns, model expects {FEATURE_DIM}")
    with torch.no_grad():
        out = model(torch.tensor(graph.features, dtype=torch.float32), graph.edge_index())
    return out.double().numpy().reshape(graph.num_nodes, len(SURFACE_KINDS), EMBEDDING_DIM)


def propagate(graph: RoomGraph, model: GatedGraphNet) -> dict:
    """Embedding for every (room, kind); observed cells pass through unchanged."""
    if not model.trained:
        raise ModelError("propagation model is untrained; train it or load a checkpoint")
    out = predict(graph, model)
    result = {}
    for i, rid in enumerate(graph.room_ids):
        for j, kind in enumerate(SURFACE_KINDS):
            if graph.observed[i, j]:
                result[(rid, kind)] = TextureEmbedding.from_vector(graph.features[i, _cell(kind)])
            else:
                result[(rid, kind)] = TextureEmbedding.from_vector(out[i, j])
    return result


# ---------------------------------------------------------------- training


@dataclass(frozen=True, eq=False)
class GraphExample:
    """A house graph with every observed surface embedding (the training targets)."""

    graph: RoomGraph
    targets: dict = field(default_factory=dict)  # (room_id, kind) -> TextureEmbedding


def make_example(house: House, embeddings: dict) -> GraphExample:
    return GraphExample(build_graph(house, embeddings), dict(embeddings))


def embedding_priors(examples) -> dict:
    """Mean observed embedding per (room type, kind), plus (None, kind) over all rooms."""
    sums: dict = {}
    for ex in examples:
        g = ex.graph
        for (rid, kind), emb in ex.targets.items():
            i = g.node(rid)
            cats = [ROOM_TYPES[c] for c in np.flatnonzero(g.features[i, :GAMMA])]
            for key in [(c, kind) for c in cats] + [(None, kind)]:
                s = sums.setdefault(key, [np.zeros(EMBEDDING_DIM), 0])
                s[0] += emb.vector
                s[1] += 1
    return {k: TextureEmbedding.from_vector(v / n) for k, (v, n) in sums.items()}


def training_instances(examples, rng: np.random.Generator, max_mask: int):
    """One masked graph copy per target surface, with up to ``max_mask`` extra surfaces hidden."""
    out = []
    for ex in examples:
        for surface, emb in sorted(ex.targets.items(), key=lambda kv: (kv[0][0], kv[0][1].index)):
            g = mask_surfaces(ex.graph, [surface])
            k = int(rng.integers(0, min(max_mask, len(g.observed_surfaces())) + 1))
            g = mask_augment(g, k, seed=int(rng.integers(2**31)))
            out.append((g, g.node(surface[0]), SURFACE_KINDS.index(surface[1]), emb.vector))
    return out


def _batch(instances):
    xs, edges, node_idx, kind_idx, targets = [], [], [], [], []
    offset = 0
    for g, node, kind, target in instances:
        xs.append(torch.tensor(g.features, dtype=torch.float32))
        edges.append(g.edge_index() + offset)
        node_idx.append(offset + node)
        kind_idx.append(kind)
        targets.append(target)
        offset += g.num_nodes
    return (
        torch.cat(xs),
        torch.cat(edges, dim=1),
        torch.tensor(node_idx),
        torch.tensor(kind_idx),
        torch.as_tensor(np.stack(targets), dtype=torch.float32),
    )


def masked_l1(model: GatedGraphNet, instances) -> float:
    """Mean per-dimension L1 error on the masked target surfaces."""
    if not instances:
        return math.nan
    x, ei, node, kind, target = _batch(instances)
    with torch.no_grad():
        out = model(x, ei).view(-1, len(SURFACE_KINDS), EMBEDDING_DIM)[node, kind]
    return float((out - target).abs().mean())


def train_gnn(examples, config: GNNConfig | None = None, val_examples=None, checkpoint=None) -> GatedGraphNet:
    """Train with Adam and an L1 loss on masked target surfaces.

    Each epoch redraws the masking augmentation. Validation L1 (targets
    masked, no extra masking) is logged per epoch when ``val_examples`` is given.
    """
    config = config or GNNConfig()
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    model = GatedGraphNet(config)
    model.priors = embedding_priors(examples)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    val = training_instances(val_examples, np.random.default_rng(0), 0) if val_examples else []
    history = []
    for epoch in range(config.epochs):
        instances = training_instances(examples, rng, config.max_mask)
        if not instances:
            raise TrainingError("no observed surfaces to train on")
        perm = rng.permutation(len(instances))
        total = 0.0
        model.train()
        for b in range(0, len(perm), config.batch_size):
            x, ei, node, kind, target = _batch([instances[i] for i in perm[b : b + config.batch_size]])
            out = model(x, ei).view(-1, len(SURFACE_KINDS), EMBEDDING_DIM)[node, kind]
            loss = (out - target).abs().mean()
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b // config.batch_size}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(node)
        model.eval()
        rec = {"epoch": epoch, "train_l1": total / len(instances)}
        if val:
            rec["val_l1"] = masked_l1(model, val)
        history.append(rec)
        if config.log_every and epoch % config.log_every == 0:
            log.info("gnn epoch %d %s", epoch, " ".join(f"{k} {v:.5f}" for k, v in rec.items() if k != "epoch"))
    model.trained = True
    model.history = history
    if checkpoint is not None:
        model.save(checkpoint)
    return model
