"""Graph convolutional backbone, classification loss, and accuracy."""

from __future__ import annotations

import numpy as np

from .autodiff import (
    ArgumentError,
    DomainError,
    Tensor,
    add,
    add_rows,
    constant,
    exp,
    log,
    matmul,
    mul,
    neg,
    powc,
    relu,
    row_sum,
    scale,
    scale_cols,
    scale_rows,
    sub,
    tsum,
)
from .nn import xavier_uniform
from .sampling import RngState


class GcnParams:
    """Per-layer weight matrices of an L-layer graph convolution."""

    def __init__(self, in_dim: int, hidden_dim: int, num_classes: int, rng: RngState, layers: int = 2):
        if layers < 1:
            raise ArgumentError("GCN needs at least one layer")
        dims = [in_dim] + [hidden_dim] * (layers - 1) + [num_classes]
        self.weights = [
            Tensor(xavier_uniform(rng, dims[i], dims[i + 1], "gcn", i), requires_grad=True)
            for i in range(layers)
        ]

    def named_params(self) -> list[tuple[str, Tensor]]:
        return [(f"gcn.{i}.w", w) for i, w in enumerate(self.weights)]


def normalize_adjacency(a: Tensor) -> Tensor:
    """D^{-1/2} (A + I) D^{-1/2} with D the degree of A + I.

    Differentiable in A; the self-loop keeps every degree positive. The
    normalizer is built as an outer product so a symmetric input yields a
    bit-exactly symmetric output.
    """
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=np.float64))
    if a.values.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ArgumentError(f"normalize_adjacency: expected square matrix, got {a.shape}")
    if np.any(a.values < 0):
        raise DomainError("normalize_adjacency: adjacency entries must be non-negative")
    n = a.shape[0]
    ahat = add(a, constant(np.eye(n)))
    dinv = powc(row_sum(ahat), -0.5)
    outer = scale_rows(scale_cols(constant(np.ones((n, n))), dinv), dinv)
    return mul(ahat, outer)


def gcn_forward(
    xhat: Tensor,
    a: Tensor,
    params: GcnParams,
    *,
    dropout: float = 0.0,
    rng: RngState | None = None,
    noise_key=0,
) -> Tensor:
    """L layers of (normalized adjacency @ H @ W) with relu between layers
    and a linear final layer producing class logits."""
    anorm = normalize_adjacency(a)
    h = xhat
    last = len(params.weights) - 1
    for i, w in enumerate(params.weights):
        h = matmul(matmul(anorm, h), w)
        if i < last:
            h = relu(h)
            if dropout > 0.0:
                if rng is None:
                    raise ArgumentError("dropout requires an RngState")
                keep = 1.0 - dropout
                mask = rng.substream("dropout", noise_key, i).random(h.shape) < keep
                h = mul(h, constant(mask.astype(np.float64) / keep))
    return h


def _mask_indices(mask, n: int) -> np.ndarray:
    idx = np.asarray(mask, dtype=np.intp).reshape(-1)
    if idx.size == 0:
        raise ArgumentError("mask selects no nodes")
    if idx.min() < 0 or idx.max() >= n:
        raise ArgumentError("mask index out of range")
    return idx


def masked_cross_entropy(logits: Tensor, labels, mask) -> Tensor:
    """Mean negative log-softmax of the true class over the masked nodes."""
    n, c = logits.shape
    labels = np.asarray(labels, dtype=np.intp)
    if labels.shape != (n,) or (labels.size and labels.max() >= c):
        raise ArgumentError(f"labels must be (N,) ints below {c}")
    idx = _mask_indices(mask, n)

    # Row-max subtraction with a detached max is exact for both the value
    # and the gradient of the log-softmax.
    rowmax = logits.values.max(axis=1, keepdims=True)
    shifted = sub(logits, constant(np.broadcast_to(rowmax, (n, c)).copy()))
    lse = log(row_sum(exp(shifted)))
    logp = add_rows(shifted, neg(lse))

    weights = np.zeros((n, c))
    weights[idx, labels[idx]] = 1.0
    total = tsum(mul(logp, constant(weights)))
    return scale(total, -1.0 / idx.size)


def accuracy(logits, labels, mask) -> float:
    """Fraction of masked nodes whose argmax logit matches the label; ties
    resolve to the lowest class index."""
    vals = logits.values if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    idx = _mask_indices(mask, vals.shape[0])
    pred = np.argmax(vals, axis=1)
    return float(np.mean(pred[idx] == labels[idx]))
