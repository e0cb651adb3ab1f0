"""Seeded noise sources for the two reparameterization tricks.

All randomness flows from a single integer seed. Substreams are derived by
hashing (seed, labels) into a Philox counter-based key, so draws are
independent of call order and reproducible across platforms. Noise arrays
are plain numpy constants: wrap them in non-grad tensors so no gradient
ever flows into the noise.
"""

from __future__ import annotations

import hashlib
from contextlib import contextmanager

import numpy as np

UNIFORM_EPS = 1e-12  # uniform draws are clamped away from {0, 1} before the double log


class SamplingError(Exception):
    pass


class FrozenNoiseError(SamplingError):
    pass


def _derive_key(seed: int, labels: tuple) -> int:
    payload = repr((int(seed),) + tuple(labels)).encode("utf-8")
    return int.from_bytes(hashlib.sha256(payload).digest()[:16], "little")


class FrozenNoise:
    """Ordered record of noise draws for exact replay.

    The first evaluation inside a freeze scope records every draw; calling
    ``rewind()`` switches to strict replay, where draws must arrive in the
    same order with the same labels and shapes. Drawing past the recorded
    sequence raises, signalling a mismatched evaluation structure.
    """

    def __init__(self):
        self._log: list[tuple[str, tuple, tuple[int, ...], np.ndarray]] = []
        self._pos = 0
        self.replaying = False

    def rewind(self) -> None:
        self.replaying = True
        self._pos = 0

    def record(self, kind: str, labels: tuple, shape: tuple[int, ...], values: np.ndarray) -> None:
        self._log.append((kind, tuple(labels), tuple(shape), values))

    def next(self, kind: str, labels: tuple, shape: tuple[int, ...]) -> np.ndarray:
        if self._pos >= len(self._log):
            raise FrozenNoiseError(
                "frozen noise replay exhausted: evaluation drew more noise than was recorded"
            )
        rkind, rlabels, rshape, values = self._log[self._pos]
        if rkind != kind or rlabels != tuple(labels) or rshape != tuple(shape):
            raise FrozenNoiseError(
                f"frozen noise mismatch at draw {self._pos}: recorded {rkind}{rlabels}{rshape}, "
                f"requested {kind}{tuple(labels)}{tuple(shape)}"
            )
        self._pos += 1
        return values


class RngState:
    """Root of all randomness for one run; split into labelled substreams."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._frozen: FrozenNoise | None = None

    def substream(self, *labels) -> np.random.Generator:
        """Independent, order-insensitive generator keyed by (seed, labels)."""
        return np.random.Generator(np.random.Philox(key=_derive_key(self.seed, labels)))

    def _draw(self, kind: str, shape: tuple[int, ...], labels: tuple, sample) -> np.ndarray:
        frozen = self._frozen
        if frozen is not None and frozen.replaying:
            return frozen.next(kind, labels, shape)
        values = sample()
        if frozen is not None:
            frozen.record(kind, labels, shape, values)
        return values

    def gumbel(self, shape, *labels) -> np.ndarray:
        """Standard Gumbel(0,1) samples: -log(-log(u)), u clamped inside (0,1)."""
        shape = tuple(int(s) for s in np.atleast_1d(shape))

        def sample():
            u = self.substream("gumbel", *labels).random(shape)
            u = np.clip(u, UNIFORM_EPS, 1.0 - UNIFORM_EPS)
            return -np.log(-np.log(u))

        return self._draw("gumbel", shape, labels, sample)

    def gaussian(self, shape, *labels) -> np.ndarray:
        """Standard normal samples in row-major order."""
        shape = tuple(int(s) for s in np.atleast_1d(shape))

        def sample():
            return self.substream("gaussian", *labels).standard_normal(shape)

        return self._draw("gaussian", shape, labels, sample)

    @contextmanager
    def freeze(self):
        """Record noise draws for exact replay; see FrozenNoise.

        Freeze scopes do not nest: the replay position is a single cursor.
        """
        if self._frozen is not None:
            raise FrozenNoiseError("freeze scopes cannot be nested")
        handle = FrozenNoise()
        self._frozen = handle
        try:
            yield handle
        finally:
            self._frozen = None


def freeze_noise(rng: RngState):
    """Context manager freezing all noise drawn through ``rng``."""
    return rng.freeze()
