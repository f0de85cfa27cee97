"""AdamW with per-group learning rates and a warmup + cosine schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Parameter


class StaleState(RuntimeError):
    """The trainable parameter set changed since the optimizer was built."""


@dataclass
class ParamGroup:
    name: str
    params: list[Parameter]
    lr: float
    weight_decay: float = 0.01


@dataclass
class OptimizerState:
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)
    step: int = 0


class AdamW:
    """Decoupled weight decay Adam.

    Only parameters with ``requires_grad`` set at construction are tracked;
    toggling that flag afterwards without :meth:`rebuild` raises StaleState
    on the next step.
    """

    def __init__(self, groups: list[ParamGroup], betas=(0.9, 0.999), eps: float = 1e-8):
        self.groups = [
            ParamGroup(g.name, [p for p in g.params if p.requires_grad], g.lr, g.weight_decay)
            for g in groups
        ]
        self._all_groups = groups
        self.betas = betas
        self.eps = eps
        self.lr_scale = 1.0
        self._tracked = self._signature()
        self.state = OptimizerState()
        self._init_moments()

    def _signature(self) -> frozenset[int]:
        return frozenset(id(p) for g in self.groups for p in g.params)

    def _init_moments(self) -> None:
        for g in self.groups:
            for p in g.params:
                self.state.m[id(p)] = np.zeros_like(p.data)
                self.state.v[id(p)] = np.zeros_like(p.data)

    def rebuild(self) -> None:
        """Fresh moments, step counter 0, and re-read the trainable flags."""
        self.groups = [
            ParamGroup(g.name, [p for p in g.params if p.requires_grad], g.lr, g.weight_decay)
            for g in self._all_groups
        ]
        self._tracked = self._signature()
        self.state = OptimizerState()
        self._init_moments()

    @property
    def params(self) -> list[Parameter]:
        return [p for g in self.groups for p in g.params]

    def zero_grad(self) -> None:
        for g in self._all_groups:
            for p in g.params:
                p.grad = None

    def step(self) -> None:
        current = frozenset(id(p) for g in self._all_groups for p in g.params if p.requires_grad)
        if current != self._tracked:
            raise StaleState("trainable parameters changed; call rebuild() first")
        b1, b2 = self.betas
        self.state.step += 1
        t = self.state.step
        c1 = 1.0 - b1**t
        c2 = 1.0 - b2**t
        for g in self.groups:
            lr = g.lr * self.lr_scale
            for p in g.params:
                if p.grad is None:
                    grad = np.zeros_like(p.data)
                else:
                    grad = p.grad.astype(p.data.dtype, copy=False)
                m = self.state.m[id(p)]
                v = self.state.v[id(p)]
                m *= b1
                m += (1.0 - b1) * grad
                v *= b2
                v += (1.0 - b2) * (grad * grad)
                if g.weight_decay:
                    p.data *= 1.0 - lr * g.weight_decay
                p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)


def adamw_step(params, grads, state: OptimizerState, lr: float = 1e-3, betas=(0.9, 0.999),
               eps: float = 1e-8, weight_decay: float = 0.0) -> None:
    """Functional single AdamW update on plain arrays, in place."""
    b1, b2 = betas
    state.step += 1
    t = state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        m = state.m.setdefault(i, np.zeros_like(p))
        v = state.v.setdefault(i, np.zeros_like(p))
        m[...] = b1 * m + (1.0 - b1) * g
        v[...] = b2 * v + (1.0 - b2) * g * g
        if weight_decay:
            p *= 1.0 - lr * weight_decay
        p -= lr * (m / (1.0 - b1**t)) / (np.sqrt(v / (1.0 - b2**t)) + eps)


def lr_schedule(step: int, total_steps: int, warmup_steps: int, base_lr: float) -> float:
    """Linear warmup from 0 to ``base_lr``, then cosine decay to 0 at ``total_steps``."""
    warmup_steps = max(1, warmup_steps)
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    if total_steps <= warmup_steps:
        return base_lr
    progress = min(1.0, (step - warmup_steps) / (total_steps - warmup_steps))
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))
