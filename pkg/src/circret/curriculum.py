"""Curriculum pieces: phase plan, caption clustering, hard-negative batch sampling."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .encoders import tokenize_caption
from .objective import ALL_DIRECTIONS, CODE_DIRECTIONS

CAPTION_DIM = 512

GRAPH_GROUPS = ("graph",)


class TooFewSamples(ValueError):
    pass


class BadEpochIndex(ValueError):
    pass


class DatasetTooSmall(ValueError):
    pass


@dataclass
class CurriculumConfig:
    n_clusters: int = 30
    alpha0: float = 0.05
    alpha_max: float = 0.3

    def __post_init__(self):
        if not 0.0 <= self.alpha0 <= self.alpha_max <= 1.0:
            raise ValueError("need 0 <= alpha0 <= alpha_max <= 1")
        if self.n_clusters < 2:
            raise ValueError("n_clusters must be >= 2")


@dataclass
class PhaseConfig:
    phase: int
    epochs: tuple[int, int]  # inclusive, 1-based
    trainable: tuple[str, ...]
    directions: tuple[tuple[str, str], ...]
    sampling: str  # "random" | "curriculum"
    rebuild_optimizer: bool = False

    def contains(self, epoch: int) -> bool:
        return self.epochs[0] <= epoch <= self.epochs[1]


def default_phases(e1: int = 6, e2: int = 2, e3: int = 12) -> list[PhaseConfig]:
    """Graph warm-up, joint transition, then curriculum hard negatives."""
    return [
        PhaseConfig(1, (1, e1), GRAPH_GROUPS, CODE_DIRECTIONS, "random"),
        PhaseConfig(2, (e1 + 1, e1 + e2), ("*",), ALL_DIRECTIONS, "random", rebuild_optimizer=True),
        PhaseConfig(3, (e1 + e2 + 1, e1 + e2 + e3), ("*",), ALL_DIRECTIONS, "curriculum"),
    ]


# ---------------------------------------------------------------- caption vectors


def caption_vector(caption: str, dim: int = CAPTION_DIM) -> np.ndarray:
    """l2-normalized hashed term frequencies of word unigrams and character 3-grams."""
    v = np.zeros(dim, dtype=np.float64)
    words = tokenize_caption(caption)
    for w in words:
        v[zlib.crc32(b"w:" + w.encode("utf-8")) % dim] += 1.0
    text = " ".join(words)
    for i in range(len(text) - 2):
        v[zlib.crc32(b"c:" + text[i : i + 3].encode("utf-8")) % dim] += 1.0
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


@dataclass
class ClusterAssignment:
    ids: list[str]
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    n_iter: int = 0
    members: dict[int, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.members:
            for i, lab in zip(self.ids, self.labels.tolist()):
                self.members.setdefault(lab, []).append(i)

    def cluster_of(self, id_: str) -> int:
        return int(self.labels[self.ids.index(id_)])


def kmeans(x: np.ndarray, k: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-6):
    """Lloyd's algorithm with k-means++ seeding. Returns (labels, centroids, inertia, iters)."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n < k:
        raise TooFewSamples(f"need at least {k} samples, got {n}")
    rng = np.random.default_rng(seed)

    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centroids[c] = x[idx]
        d2 = np.minimum(d2, ((x - centroids[c]) ** 2).sum(axis=1))

    it = 0
    for it in range(1, max_iter + 1):
        dist = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        labels = dist.argmin(axis=1)
        new = centroids.copy()
        for c in range(k):
            members = labels == c
            if members.any():
                new[c] = x[members].mean(axis=0)
            else:
                # refill an empty cluster with the worst-served point
                far = int(dist[np.arange(n), labels].argmax())
                new[c] = x[far]
                labels[far] = c
        shift = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        centroids = new
        if shift < tol:
            break
    dist = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = dist.argmin(axis=1)
    inertia = float(dist[np.arange(n), labels].sum())
    return labels, centroids, inertia, it


def cluster_captions(ids: Sequence[str], captions: Sequence[str], k: int = 30, seed: int = 0) -> ClusterAssignment:
    if len(captions) < k:
        raise TooFewSamples(f"need at least {k} captions, got {len(captions)}")
    x = np.stack([caption_vector(c) for c in captions])
    labels, centroids, inertia, iters = kmeans(x, k, seed)
    return ClusterAssignment(list(ids), labels, centroids, inertia, iters)


# ---------------------------------------------------------------- hard negatives


def hard_negative_ratio(m: int, total: int, alpha0: float = 0.05, alpha_max: float = 0.3) -> float:
    """Hard-negative fraction for Phase-3 epoch ``m`` of ``total`` (1-based), linear in ``m``."""
    if total < 2 or not 1 <= m <= total:
        raise BadEpochIndex(f"need 1 <= m <= M and M >= 2, got m={m}, M={total}")
    if m == total:
        return alpha_max  # exact endpoint, free of rounding in the affine form
    return min(alpha_max, alpha0 + (m - 1) / (total - 1) * (alpha_max - alpha0))


def n_hard(alpha: float, batch_size: int) -> int:
    # round half up
    return int(math.floor(alpha * batch_size + 0.5))


def sample_batch(ids: Sequence[str], batch_size: int, alpha: float, clusters: ClusterAssignment | None,
                 rng: np.random.Generator) -> list[str]:
    """One batch: ``round(alpha * B)`` ids from a random anchor cluster, the rest
    uniformly from outside it. A short cluster is backfilled uniformly."""
    ids = list(ids)
    if len(ids) < batch_size:
        raise DatasetTooSmall(f"dataset of {len(ids)} < batch size {batch_size}")
    want = n_hard(alpha, batch_size)
    if want == 0 or clusters is None:
        pick = rng.choice(len(ids), size=batch_size, replace=False)
        return [ids[i] for i in pick]

    pool = set(ids)
    groups = [
        [i for i in clusters.members[c] if i in pool]
        for c in sorted(clusters.members)
    ]
    groups = [g for g in groups if g]
    anchor = groups[int(rng.integers(len(groups)))]
    take = min(want, len(anchor))
    hard = [anchor[i] for i in rng.choice(len(anchor), size=take, replace=False)]
    in_anchor = set(anchor)
    rest = [i for i in ids if i not in in_anchor]
    need = batch_size - take
    if need > len(rest):
        # cluster covers most of the data; top up from its unused members
        spare = [i for i in anchor if i not in set(hard)]
        rest = rest + spare
    fill = [rest[i] for i in rng.choice(len(rest), size=need, replace=False)]
    return hard + fill
