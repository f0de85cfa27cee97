"""Contrastive alignment loss over modality pairs plus topology classification."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import Module, Parameter, Tensor, ops
from .engine.nn import Linear

NUM_CLASSES = 19

# (anchor, target) modality pairs; C=code, I=image, T=text
ALL_DIRECTIONS = (("C", "I"), ("I", "C"), ("T", "I"), ("I", "T"), ("C", "T"), ("T", "C"))
CODE_DIRECTIONS = (("I", "C"), ("C", "I"), ("T", "C"), ("C", "T"))


class BatchMismatch(ValueError):
    pass


class LabelOutOfRange(ValueError):
    pass


def direction_name(d: tuple[str, str]) -> str:
    return f"{d[0]}->{d[1]}"


@dataclass
class ObjectiveConfig:
    label_smoothing: float = 0.1
    aux_weight: float = 0.5
    directions: tuple[tuple[str, str], ...] = field(default=ALL_DIRECTIONS)

    def __post_init__(self):
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must lie in [0, 1)")
        if self.aux_weight < 0:
            raise ValueError("aux_weight must be non-negative")
        self.directions = tuple(tuple(d) for d in self.directions)


class Temperature(Module):
    """Learnable logit scale (inverse temperature), kept inside (0, max_scale]."""

    def __init__(self, init: float = 1.0 / 0.07, max_scale: float = 100.0, group: str = "temperature"):
        self.logit_scale = Parameter(np.array(init), group)
        self.max_scale = max_scale

    def clamp(self) -> None:
        np.clip(self.logit_scale.data, 1e-3, self.max_scale, out=self.logit_scale.data)

    @property
    def value(self) -> float:
        return float(self.logit_scale.data)


class AuxClassifier(Module):
    """Shared 768 -> 256 -> 19 topology classifier."""

    def __init__(self, rng: np.random.Generator, d_in: int = 768, hidden: int = 256,
                 num_classes: int = NUM_CLASSES, group: str = "aux"):
        self.fc1 = Linear(d_in, hidden, rng, group)
        self.fc2 = Linear(hidden, num_classes, rng, group)
        self.num_classes = num_classes

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ops.gelu(self.fc1(x)))


def _scale(logit_scale) -> Tensor:
    if isinstance(logit_scale, Tensor):
        return logit_scale
    return Tensor(np.array(logit_scale, dtype=np.float64))


def info_nce_direction(anchors: Tensor, targets: Tensor, logit_scale, smoothing: float = 0.0) -> Tensor:
    """Anchor-to-target InfoNCE with index-aligned positives.

    Targets for row ``i`` are ``(1 - eps) * onehot(i) + eps / B``.
    """
    if anchors.shape != targets.shape:
        raise BatchMismatch(f"anchors {anchors.shape} vs targets {targets.shape}")
    b = anchors.shape[0]
    logits = ops.mul(ops.matmul(anchors, ops.transpose(targets)), _scale(logit_scale))
    q = np.full((b, b), smoothing / b, dtype=anchors.dtype)
    q[np.diag_indices(b)] += 1.0 - smoothing
    return ops.cross_entropy(logits, q)


def tri_modal_loss(v_c: Tensor | None, v_s: Tensor | None, v_t: Tensor | None, logit_scale,
                   config: ObjectiveConfig) -> Tensor:
    """Sum of directional InfoNCE terms over ``config.directions``."""
    by_mod = {"C": v_c, "I": v_s, "T": v_t}
    total = None
    for a, b in config.directions:
        if by_mod[a] is None or by_mod[b] is None:
            raise BatchMismatch(f"direction {a}->{b} needs both modalities")
        term = info_nce_direction(by_mod[a], by_mod[b], logit_scale, config.label_smoothing)
        total = term if total is None else ops.add(total, term)
    if total is None:
        raise ValueError("no active directions")
    return total


def aux_cls_loss(v_t: Tensor, v_c: Tensor, labels, classifier: AuxClassifier) -> Tensor:
    """Mean of the text and code cross-entropies against topology labels (no smoothing)."""
    y = np.asarray(labels, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() >= classifier.num_classes):
        raise LabelOutOfRange(f"labels must lie in [0, {classifier.num_classes})")
    ce_t = ops.cross_entropy(classifier(v_t), y)
    ce_c = ops.cross_entropy(classifier(v_c), y)
    return ops.mul(ops.add(ce_t, ce_c), 0.5)


def total_loss(align: Tensor, cls: Tensor | None, aux_weight: float) -> Tensor:
    if cls is None or aux_weight == 0:
        return align
    return ops.add(align, ops.mul(cls, aux_weight))
