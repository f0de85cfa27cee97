"""Exact cosine-similarity index and Recall@K evaluation over six directions.

Binary index layout (little-endian)::

    b"ARIX" | u32 version | u32 dim | u64 count
    count x (u32 byte length, UTF-8 id)
    count x dim float32 matrix, row-major
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = b"ARIX"
VERSION = 1
UNIT_TOL = 1e-5

# column order of the report table
TABLE_DIRECTIONS = ("I->C", "T->I", "T->C", "C->I", "I->T", "C->T")
MODALITY_LETTER = {"code": "C", "image": "I", "text": "T"}
LETTER_MODALITY = {v: k for k, v in MODALITY_LETTER.items()}


class RetrievalError(LookupError):
    pass


class EmptyIndex(RetrievalError):
    pass


class DimMismatch(ValueError):
    pass


class DuplicateId(ValueError):
    pass


class NotUnitNorm(ValueError):
    pass


class MissingPair(KeyError):
    pass


class IndexFormatError(ValueError):
    pass


@dataclass
class EmbeddingIndex:
    ids: list[str]
    vectors: np.ndarray  # (N, d) float32, unit rows
    modality: str = ""
    dim: int = 768
    _pos: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._pos = {i: k for k, i in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)

    def position(self, id_: str) -> int:
        return self._pos[id_]

    def scores(self, queries: np.ndarray) -> np.ndarray:
        """Cosine scores (float64) of each query row against every stored row."""
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        if q.shape[1] != self.dim:
            raise DimMismatch(f"query dim {q.shape[1]} != index dim {self.dim}")
        norms = np.linalg.norm(q, axis=1, keepdims=True)
        q = q / np.where(norms == 0, 1.0, norms)
        return q @ self.vectors.astype(np.float64).T

    def top_k(self, query: np.ndarray, k: int) -> list[tuple[str, float]]:
        if len(self.ids) == 0:
            raise EmptyIndex("index is empty")
        if k < 1:
            raise ValueError("k must be >= 1")
        s = self.scores(query)[0]
        order = np.lexsort((self._id_rank(), -s))[:k]
        return [(self.ids[i], float(s[i])) for i in order]

    def _id_rank(self) -> np.ndarray:
        # rank of each row's id in ascending id order, for tie-breaking
        rank = np.empty(len(self.ids), dtype=np.int64)
        rank[np.argsort(np.array(self.ids, dtype=object), kind="stable")] = np.arange(len(self.ids))
        return rank

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<IIQ", VERSION, self.dim, len(self.ids)))
            for id_ in self.ids:
                raw = id_.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)
            fh.write(np.ascontiguousarray(self.vectors, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path, modality: str = "") -> "EmbeddingIndex":
        raw = Path(path).read_bytes()
        if raw[:4] != MAGIC:
            raise IndexFormatError(f"{path}: bad magic")
        version, dim, count = struct.unpack_from("<IIQ", raw, 4)
        if version != VERSION:
            raise IndexFormatError(f"{path}: unsupported version {version}")
        pos = 4 + struct.calcsize("<IIQ")
        ids = []
        for _ in range(count):
            (n,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            ids.append(raw[pos : pos + n].decode("utf-8"))
            pos += n
        mat = np.frombuffer(raw, dtype="<f4", count=count * dim, offset=pos).reshape(count, dim)
        return cls(ids, mat.astype(np.float32), modality, dim)


def build_index(ids: Sequence[str], vectors, modality: str = "", dim: int | None = None) -> EmbeddingIndex:
    """Validate and pack embeddings; ids keep insertion order."""
    ids = list(ids)
    mat = np.asarray(vectors, dtype=np.float32)
    if len(ids) == 0:
        return EmbeddingIndex([], np.zeros((0, dim or 768), dtype=np.float32), modality, dim or 768)
    if mat.ndim != 2 or mat.shape[0] != len(ids):
        raise DimMismatch(f"{len(ids)} ids vs matrix of shape {mat.shape}")
    if dim is not None and mat.shape[1] != dim:
        raise DimMismatch(f"vectors are {mat.shape[1]}-d, expected {dim}")
    if len(set(ids)) != len(ids):
        raise DuplicateId("ids must be unique")
    norms = np.linalg.norm(mat.astype(np.float64), axis=1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise NotUnitNorm("index rows must be unit norm")
    return EmbeddingIndex(ids, mat.copy(), modality, mat.shape[1])


def paired_ranks(query_ids: Sequence[str], query_vecs, index: EmbeddingIndex, pairing: dict[str, str]) -> np.ndarray:
    """0-based rank of each query's paired target under the top_k ordering."""
    if len(index) == 0:
        raise EmptyIndex("index is empty")
    scores = index.scores(query_vecs)
    id_rank = index._id_rank()
    ranks = np.empty(len(query_ids), dtype=np.int64)
    for qi, qid in enumerate(query_ids):
        if qid not in pairing or pairing[qid] not in index._pos:
            raise MissingPair(qid)
        t = index.position(pairing[qid])
        row = scores[qi]
        better = row > row[t]
        tied_before = (row == row[t]) & (id_rank < id_rank[t])
        ranks[qi] = int(better.sum() + tied_before.sum())
    return ranks


def recall_at_k(query_ids, query_vecs, index: EmbeddingIndex, pairing: dict[str, str], k: int) -> float:
    """Fraction of queries whose paired id lands in the top ``k``."""
    ranks = paired_ranks(query_ids, query_vecs, index, pairing)
    return float(np.mean(ranks < k)) if len(ranks) else 0.0


@dataclass
class RetrievalReport:
    recalls: dict[str, dict[int, float]]  # direction -> {K: recall}
    n_queries: int = 0

    @property
    def avg_r1(self) -> float:
        vals = [r[1] for r in self.recalls.values()]
        return float(sum(vals) / len(vals)) if vals else 0.0

    def to_json(self) -> dict:
        return {
            "directions": {d: {f"R@{k}": v for k, v in r.items()} for d, r in self.recalls.items()},
            "avg_r1": self.avg_r1,
            "n_queries": self.n_queries,
        }

    def to_table(self) -> str:
        cols = [d for d in TABLE_DIRECTIONS if d in self.recalls]
        head1 = "".join(f"{d:^22}" for d in cols) + f"{'Avg':>8}"
        head2 = "".join(f"{'R@1':>7}{'R@5':>7}{'R@10':>8}" for _ in cols) + f"{'R@1':>8}"
        row = "".join(
            f"{100 * self.recalls[d][1]:7.1f}{100 * self.recalls[d][5]:7.1f}{100 * self.recalls[d][10]:8.1f}"
            for d in cols
        ) + f"{100 * self.avg_r1:8.1f}"
        return "\n".join([head1, head2, row])


def evaluate_six_directions(embeddings: dict[str, tuple[Sequence[str], np.ndarray]],
                            ks: Sequence[int] = (1, 5, 10)) -> RetrievalReport:
    """Recall@K for every query->target modality pair present in ``embeddings``.

    ``embeddings`` maps modality name to ``(ids, vectors)``; a sample shares its
    id across modalities, which defines the ground-truth pairing.
    """
    indices = {m: build_index(ids, vecs, m) for m, (ids, vecs) in embeddings.items()}
    recalls: dict[str, dict[int, float]] = {}
    n = 0
    for name in TABLE_DIRECTIONS:
        qa, ta = name.split("->")
        qm, tm = LETTER_MODALITY[qa], LETTER_MODALITY[ta]
        if qm not in embeddings or tm not in embeddings:
            continue
        q_ids, q_vecs = embeddings[qm]
        pairing = {i: i for i in q_ids}
        ranks = paired_ranks(q_ids, q_vecs, indices[tm], pairing)
        recalls[name] = {k: float(np.mean(ranks < k)) for k in ks}
        n = len(q_ids)
    return RetrievalReport(recalls, n)
