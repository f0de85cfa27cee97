"""Modality encoders mapping netlists, captions and image features to unit vectors.

The code tower is a port-aware relational GCN: featurize nodes, run ``L``
message-passing layers with one weight matrix per relation, attention-pool
the final node states and project into the shared space. Text and image
towers are small stand-ins (hashed bag of words; affine map over
precomputed features).
"""

from __future__ import annotations

import re
import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .engine import Module, Parameter, Tensor, ops
from .engine.nn import LayerNorm, Linear, init_normal
from .graph import NUM_RELATIONS, CircuitGraph, NodeFeaturizer, RelationOutOfRange

EMBED_DIM = 768


class EmptyInput(ValueError):
    pass


class EmptyGraph(ValueError):
    pass


@dataclass
class Embedding:
    vector: np.ndarray
    modality: str  # "code" | "text" | "image"
    sample_id: str | None = None


# ---------------------------------------------------------------- graph batching


@dataclass
class RelationBlock:
    rel: int
    src: np.ndarray  # source node per edge
    slot: np.ndarray  # index into ``dst_nodes`` per edge
    dst_nodes: np.ndarray  # unique destination nodes


@dataclass
class GraphBatch:
    """Several graphs packed into one disjoint union."""

    kinds: np.ndarray
    cont: np.ndarray
    graph_ids: np.ndarray
    num_graphs: int
    blocks: list[RelationBlock]

    @property
    def num_nodes(self) -> int:
        return len(self.kinds)

    @classmethod
    def collate(cls, graphs: Sequence[CircuitGraph]) -> "GraphBatch":
        kinds, cont, gids, src, dst, rel = [], [], [], [], [], []
        offset = 0
        for gi, g in enumerate(graphs):
            if g.num_nodes == 0:
                raise EmptyGraph("graph has no nodes")
            if g.num_edges and (g.rel.min() < 0 or g.rel.max() >= NUM_RELATIONS):
                raise RelationOutOfRange(f"relation ids must lie in [0, {NUM_RELATIONS})")
            kinds.append(g.kinds)
            cont.append(g.cont)
            gids.append(np.full(g.num_nodes, gi, dtype=np.int64))
            src.append(g.src + offset)
            dst.append(g.dst + offset)
            rel.append(g.rel)
            offset += g.num_nodes
        src_a = np.concatenate(src).astype(np.int64)
        dst_a = np.concatenate(dst).astype(np.int64)
        rel_a = np.concatenate(rel).astype(np.int64)
        blocks = []
        for r in range(NUM_RELATIONS):
            mask = rel_a == r
            if not mask.any():
                continue
            d = dst_a[mask]
            uniq, slot = np.unique(d, return_inverse=True)
            blocks.append(RelationBlock(r, src_a[mask], slot.reshape(-1), uniq))
        return cls(np.concatenate(kinds), np.concatenate(cont), np.concatenate(gids), len(graphs), blocks)


# ---------------------------------------------------------------- code tower


class RGCNLayer(Module):
    """``h' = GraphNorm(gelu(sum_r mean_{u in N_r(v)} W_r h_u)) + h``."""

    def __init__(self, d: int, rng: np.random.Generator, group: str = "graph.rgcn", use_graph_norm: bool = True):
        self.weights = [Parameter(init_normal(rng, (d, d), d**-0.5), group) for _ in range(NUM_RELATIONS)]
        self.gn_gamma = Parameter(np.ones(d), group)
        self.gn_beta = Parameter(np.zeros(d), group)
        self.gn_alpha = Parameter(np.ones(d), group)
        self.use_graph_norm = use_graph_norm
        self.d = d

    def aggregate(self, h: Tensor, batch: GraphBatch) -> Tensor:
        total = None
        for blk in batch.blocks:
            mean_in = ops.segment_mean(ops.gather(h, blk.src), blk.slot, len(blk.dst_nodes))
            msg = ops.segment_sum(ops.matmul(mean_in, self.weights[blk.rel]), blk.dst_nodes, batch.num_nodes)
            total = msg if total is None else ops.add(total, msg)
        if total is None:
            total = Tensor(np.zeros(h.shape, dtype=h.dtype))
        return total

    def __call__(self, h: Tensor, batch: GraphBatch) -> Tensor:
        act = ops.gelu(self.aggregate(h, batch))
        if self.use_graph_norm:
            act = ops.graph_norm(act, batch.graph_ids, batch.num_graphs, self.gn_gamma, self.gn_beta, self.gn_alpha)
        return ops.add(act, h)


class AttentionPool(Module):
    def __init__(self, d: int, rng: np.random.Generator, group: str = "graph.pool"):
        self.w = Parameter(init_normal(rng, (d,), d**-0.5), group)

    def __call__(self, h: Tensor, graph_ids: np.ndarray, num_graphs: int) -> Tensor:
        return attention_pool(h, self.w, graph_ids, num_graphs)


def attention_pool(h: Tensor, w: Tensor, graph_ids=None, num_graphs: int = 1) -> Tensor:
    """``sum_v softmax_v(w . h_v) h_v`` per graph; returns (num_graphs, d)."""
    h, w = (x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64)) for x in (h, w))
    if h.shape[0] == 0:
        raise EmptyGraph("cannot pool an empty node set")
    if graph_ids is None:
        graph_ids = np.zeros(h.shape[0], dtype=np.int64)
    scores = ops.matmul(h, w)
    alpha = ops.segment_softmax(scores, graph_ids, num_graphs)
    weighted = ops.mul(h, ops.reshape(alpha, (-1, 1)))
    return ops.segment_sum(weighted, graph_ids, num_graphs)


class ProjectionHead(Module):
    """Linear -> LayerNorm -> GELU -> Dropout -> Linear -> l2-normalize."""

    def __init__(self, d_in: int, rng: np.random.Generator, hidden: int = 1024, d_out: int = EMBED_DIM,
                 dropout: float = 0.1, group: str = "graph.head"):
        self.fc1 = Linear(d_in, hidden, rng, group)
        self.norm = LayerNorm(hidden, group)
        self.fc2 = Linear(hidden, d_out, rng, group)
        self.p = dropout
        self._rng = rng

    def __call__(self, x: Tensor) -> Tensor:
        h = ops.gelu(self.norm(self.fc1(x)))
        h = ops.dropout(h, self.p, self._rng, self.training)
        return ops.l2_normalize(self.fc2(h))


class GraphEncoder(Module):
    def __init__(self, rng: np.random.Generator, d_g: int = 512, layers: int = 2, d_type: int = 64,
                 d_cont: int = 64, head_hidden: int = 1024, d_out: int = EMBED_DIM, dropout: float = 0.1):
        self.featurizer = NodeFeaturizer(rng, d_g, d_type, d_cont)
        self.layers = [RGCNLayer(d_g, rng) for _ in range(layers)]
        self.pool = AttentionPool(d_g, rng)
        self.head = ProjectionHead(d_g, rng, head_hidden, d_out, dropout)

    def node_states(self, batch: GraphBatch) -> Tensor:
        h = self.featurizer(batch.kinds, batch.cont)
        for layer in self.layers:
            h = layer(h, batch)
        return h

    def __call__(self, graphs: Sequence[CircuitGraph] | GraphBatch) -> Tensor:
        batch = graphs if isinstance(graphs, GraphBatch) else GraphBatch.collate(graphs)
        h = self.node_states(batch)
        return self.head(self.pool(h, batch.graph_ids, batch.num_graphs))


def rgcn_forward(graph: CircuitGraph, layers: Sequence[RGCNLayer], h0: Tensor) -> Tensor:
    """Run message passing over one graph from initial node states ``h0``."""
    batch = GraphBatch.collate([graph])
    h = h0
    for layer in layers:
        h = layer(h, batch)
    return h


# ---------------------------------------------------------------- text / image towers

_TOKEN_STRIP = ".,;:!?()[]\"'"


def tokenize_caption(caption: str) -> list[str]:
    """Lower-case whitespace tokens with surrounding punctuation removed."""
    tokens = (t.strip(_TOKEN_STRIP) for t in re.split(r"\s+", caption.lower()))
    return [t for t in tokens if t]


def hash_token(token: str, buckets: int) -> int:
    return zlib.crc32(token.encode("utf-8")) % buckets


class TextEncoder(Module):
    """Hashed bag-of-tokens: embedding lookup, mean pool, affine map, l2-normalize."""

    def __init__(self, rng: np.random.Generator, vocab: int = 8192, dim: int = 256, d_out: int = EMBED_DIM):
        self.embedding = Parameter(init_normal(rng, (vocab, dim), 1.0), "text.embedding")
        self.proj = Linear(dim, d_out, rng, "text.proj")
        self.vocab = vocab

    def token_ids(self, caption: str) -> np.ndarray:
        tokens = tokenize_caption(caption)
        if not tokens:
            raise EmptyInput("caption has no tokens")
        return np.array([hash_token(t, self.vocab) for t in tokens], dtype=np.int64)

    def __call__(self, captions: Sequence[str]) -> Tensor:
        ids = [self.token_ids(c) for c in captions]
        seg = np.concatenate([np.full(len(x), i) for i, x in enumerate(ids)])
        pooled = ops.segment_mean(ops.embedding(self.embedding, np.concatenate(ids)), seg, len(ids))
        return ops.l2_normalize(self.proj(pooled))


class ImageFeatureEncoder(Module):
    """Affine map over precomputed image feature vectors, then l2-normalize."""

    def __init__(self, rng: np.random.Generator, feature_dim: int = 512, d_out: int = EMBED_DIM):
        self.proj = Linear(feature_dim, d_out, rng, "image.proj")
        self.feature_dim = feature_dim

    def __call__(self, features) -> Tensor:
        x = np.asarray(features, dtype=np.float32)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[-1] != self.feature_dim:
            raise EmptyInput(f"expected {self.feature_dim}-d features, got {x.shape[-1]}")
        if not np.all(np.isfinite(x)):
            raise EmptyInput("image features must be finite")
        return ops.l2_normalize(self.proj(Tensor(x)))
