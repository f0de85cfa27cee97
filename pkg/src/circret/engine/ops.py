"""Differentiable operations on :class:`Tensor`.

Reductions accumulate in float64 and cast back to the input dtype.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy import sparse
from scipy.special import erf

from .tensor import ShapeMismatch, Tensor, as_tensor, make_result

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ZeroNormWarning(RuntimeWarning):
    """Raised (as a warning) when l2-normalizing an all-zero vector."""


def _coerce(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return a, b


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> np.ndarray:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# ------------------------------------------------------------------ arithmetic


def add(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _check_broadcast(a, b, "add")
    return make_result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _check_broadcast(a, b, "sub")
    return make_result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _check_broadcast(a, b, "mul")
    return make_result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data
    return make_result(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
        "div",
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        if a.ndim == 2 and b.ndim == 2:
            return g @ b.data.T, a.data.T @ g
        if a.ndim == 2:  # matrix @ vector
            return np.outer(g, b.data), a.data.T @ g
        if b.ndim == 2:  # vector @ matrix
            return b.data @ g, np.outer(a.data, g)
        return g * b.data, g * a.data

    return make_result(out, (a, b), backward, "matmul")


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=keepdims, dtype=np.float64).astype(x.dtype)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=True),)

    return make_result(np.asarray(out), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def transpose(x: Tensor) -> Tensor:
    return make_result(x.data.T, (x,), lambda g: (g.T,), "transpose")


def reshape(x: Tensor, shape) -> Tensor:
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: {exc}") from None
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return make_result(out, tensors, lambda g: tuple(np.split(g, cuts, axis=axis)), "concat")


# ------------------------------------------------------------------ elementwise


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return make_result(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    return make_result(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def log1p(x: Tensor) -> Tensor:
    return make_result(np.log1p(x.data), (x,), lambda g: (g / (1.0 + x.data),), "log1p")


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return make_result(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the normal CDF written through erf."""
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))
    out = (x.data * cdf).astype(x.dtype)

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return ((g * (cdf + x.data * pdf)).astype(x.dtype),)

    return make_result(out, (x,), backward, "gelu")


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not training or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return make_result(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# ------------------------------------------------------------------ normalization


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True, dtype=np.float64).astype(x.dtype)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True, dtype=np.float64).astype(x.dtype)
        return (out * (g - dot),)

    return make_result(out, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True, dtype=np.float64)).astype(x.dtype)
    out = shifted - lse

    def backward(g):
        total = g.sum(axis=axis, keepdims=True, dtype=np.float64).astype(x.dtype)
        return (g - np.exp(out) * total,)

    return make_result(out, (x,), backward, "log_softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeMismatch(f"layer_norm: feature dim {x.shape[-1]} vs {gamma.shape}/{beta.shape}")
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True, dtype=np.float64).astype(x.dtype)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True, dtype=np.float64).astype(x.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        gx_hat = g * gamma.data
        gx = inv / d * (
            d * gx_hat
            - gx_hat.sum(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).sum(axis=-1, keepdims=True)
        )
        lead = tuple(range(x.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return make_result(out, (x, gamma, beta), backward, "layer_norm")


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Scale rows to unit norm. All-zero rows stay zero and emit ZeroNormWarning."""
    norm = np.sqrt((x.data.astype(np.float64) ** 2).sum(axis=axis, keepdims=True))
    zero = norm <= eps
    if np.any(zero):
        warnings.warn("l2_normalize: zero vector left unnormalized", ZeroNormWarning, stacklevel=2)
    safe = np.where(zero, 1.0, norm)
    out = (x.data / safe).astype(x.dtype)
    out = np.where(zero, 0.0, out).astype(x.dtype)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        gx = (g - out * dot) / safe
        return (np.where(zero, 0.0, gx).astype(x.dtype),)

    return make_result(out, (x,), backward, "l2_normalize")


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise cosine similarity matrix between the rows of ``a`` and ``b``."""
    if a.shape[-1] != b.shape[-1]:
        raise ShapeMismatch(f"cosine_similarity: {a.shape} vs {b.shape}")
    return matmul(l2_normalize(a), transpose(l2_normalize(b)))


def cross_entropy(logits: Tensor, targets, smoothing: float = 0.0) -> Tensor:
    """Mean cross-entropy over rows.

    ``targets`` is either an integer label vector or a row-stochastic matrix.
    Integer labels are smoothed to ``(1 - smoothing) * onehot + smoothing / C``.
    """
    n, c = logits.shape
    t = np.asarray(targets)
    if t.ndim == 1:
        if t.shape[0] != n:
            raise ShapeMismatch(f"cross_entropy: {n} rows vs {t.shape[0]} labels")
        q = np.full((n, c), smoothing / c, dtype=logits.dtype)
        q[np.arange(n), t.astype(np.int64)] += 1.0 - smoothing
    else:
        if t.shape != logits.shape:
            raise ShapeMismatch(f"cross_entropy: targets {t.shape} vs logits {logits.shape}")
        q = t.astype(logits.dtype)
    logp = log_softmax(logits, axis=-1)
    return mul(sum(mul(logp, Tensor(q))), -1.0 / n)


# ------------------------------------------------------------------ indexing / segments


def _scatter_matrix(index: np.ndarray, n: int) -> sparse.csr_matrix:
    m = len(index)
    return sparse.csr_matrix((np.ones(m), (index, np.arange(m))), shape=(n, m))


def gather(x: Tensor, index) -> Tensor:
    """Select rows ``x[index]``; the backward pass scatter-adds into ``x``."""
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise IndexError(f"gather: index out of range for {x.shape[0]} rows")

    def backward(g):
        flat = g.reshape(len(index), -1)
        acc = _scatter_matrix(index, x.shape[0]) @ flat
        return (np.asarray(acc, dtype=x.dtype).reshape(x.shape),)

    return make_result(x.data[index], (x,), backward, "gather")


embedding = gather


def segment_sum(x: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Sum rows of ``x`` sharing a segment id; output has ``num_segments`` rows."""
    seg = np.asarray(segment_ids, dtype=np.int64)
    if seg.shape[0] != x.shape[0]:
        raise ShapeMismatch(f"segment_sum: {x.shape[0]} rows vs {seg.shape[0]} ids")
    flat = x.data.reshape(x.shape[0], -1)
    out = np.asarray(_scatter_matrix(seg, num_segments) @ flat, dtype=x.dtype)
    out = out.reshape((num_segments,) + x.shape[1:])
    return make_result(out, (x,), lambda g: (g[seg],), "segment_sum")


def segment_mean(x: Tensor, segment_ids, num_segments: int) -> Tensor:
    seg = np.asarray(segment_ids, dtype=np.int64)
    counts = np.bincount(seg, minlength=num_segments).astype(x.dtype)
    counts = np.maximum(counts, 1).reshape((num_segments,) + (1,) * (x.ndim - 1))
    return div(segment_sum(x, seg, num_segments), Tensor(counts))


def segment_softmax(logits: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Softmax of a 1-D score vector within each segment."""
    seg = np.asarray(segment_ids, dtype=np.int64)
    seg_max = np.full(num_segments, -np.inf, dtype=logits.dtype)
    np.maximum.at(seg_max, seg, logits.data)
    shifted = sub(logits, Tensor(seg_max[seg]))
    e = exp(shifted)
    totals = segment_sum(e, seg, num_segments)
    return div(e, gather(totals, seg))


def graph_norm(
    x: Tensor,
    segment_ids,
    num_segments: int,
    gamma: Tensor,
    beta: Tensor,
    mean_scale: Tensor,
    eps: float = 1e-5,
) -> Tensor:
    """Per-graph normalization ``gamma * (x - a * mu) / sigma + beta``.

    ``mu`` and ``sigma`` are computed over the nodes of each graph and ``a``
    is the learnable mean-scale.
    """
    seg = np.asarray(segment_ids, dtype=np.int64)
    mu = segment_mean(x, seg, num_segments)
    centered = sub(x, mul(gather(mu, seg), mean_scale))
    var = segment_mean(mul(centered, centered), seg, num_segments)
    std = sqrt(add(var, eps))
    return add(mul(div(centered, gather(std, seg)), gamma), beta)
