"""Small MLP building blocks on top of the tensor engine."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, add_rowvec, matmul, tanh
from .sampling import RngState


def xavier_uniform(rng: RngState, fan_in: int, fan_out: int, *labels) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.substream("init", *labels).uniform(-limit, limit, (fan_in, fan_out))


class Affine:
    """y = x @ weight + bias, weight Xavier-initialized, bias zero."""

    def __init__(self, in_dim: int, out_dim: int, rng: RngState, name: str):
        self.name = name
        self.weight = Tensor(xavier_uniform(rng, in_dim, out_dim, name, "w"), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return add_rowvec(matmul(x, self.weight), self.bias)

    def named_params(self) -> list[tuple[str, Tensor]]:
        return [(f"{self.name}.w", self.weight), (f"{self.name}.b", self.bias)]


class Mlp:
    """Stack of affine layers with tanh between them and a linear output."""

    def __init__(self, sizes: list[int], rng: RngState, name: str):
        if len(sizes) < 2:
            raise ValueError("Mlp needs at least input and output sizes")
        self.name = name
        self.layers = [
            Affine(sizes[i], sizes[i + 1], rng, f"{name}.{i}") for i in range(len(sizes) - 1)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < last:
                h = tanh(h)
        return h

    def named_params(self) -> list[tuple[str, Tensor]]:
        out = []
        for layer in self.layers:
            out.extend(layer.named_params())
        return out
