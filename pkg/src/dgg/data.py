"""Dataset container, JSON (de)serialization, synthetic graphs, edge noise.

The on-disk format is a single JSON document:

    {"num_nodes": N, "num_classes": C,
     "features": [[float, ...] x N],
     "edges": [[src, dst], ...],              # directed, deduplicated
     "labels": [int x N],
     "train_mask": [idx...], "val_mask": [idx...], "test_mask": [idx...]}

Saves are canonical (sorted edges, fixed key order, repr-exact floats) so a
save/load/save round trip is byte-identical. Files ending in .gz are
transparently gzip-compressed on load and save.
"""

from __future__ import annotations

import gzip
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .sampling import RngState


class DatasetError(ValueError):
    pass


@dataclass
class GraphDataset:
    features: np.ndarray                  # (N, d) float64
    edges: list[tuple[int, int]]          # directed pairs, no duplicates, no self-loops
    labels: np.ndarray                    # (N,) int
    train_mask: np.ndarray                # node indices
    val_mask: np.ndarray
    test_mask: np.ndarray
    num_classes: int

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def validate(self) -> None:
        n = self.num_nodes
        if n == 0:
            raise DatasetError("dataset has no nodes")
        if self.labels.shape != (n,):
            raise DatasetError(f"labels shape {self.labels.shape} does not match {n} nodes")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DatasetError("label out of range for num_classes")
        seen: set[int] = set()
        for name, mask in (("train", self.train_mask), ("val", self.val_mask), ("test", self.test_mask)):
            for i in np.asarray(mask).tolist():
                if not 0 <= i < n:
                    raise DatasetError(f"{name}_mask index {i} out of range")
                if i in seen:
                    raise DatasetError(f"node {i} appears in more than one mask")
                seen.add(i)
        edge_set = set()
        for s, d in self.edges:
            if not (0 <= s < n and 0 <= d < n):
                raise DatasetError(f"edge ({s}, {d}) endpoint out of range")
            if s == d:
                raise DatasetError(f"self-loop ({s}, {d}) not allowed")
            if (s, d) in edge_set:
                raise DatasetError(f"duplicate edge ({s}, {d})")
            edge_set.add((s, d))

    def dense_adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_nodes, self.num_nodes))
        for s, d in self.edges:
            a[s, d] = 1.0
        return a


def _open(path, mode: str):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def load_dataset(path) -> GraphDataset:
    """Load and validate a dataset; duplicate edges are collapsed and
    self-loops dropped (the convolution re-adds self-loops itself)."""
    try:
        with _open(path, "r") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as err:
        raise DatasetError(f"{path}: malformed JSON at line {err.lineno}: {err.msg}") from err

    try:
        n = int(raw["num_nodes"])
        num_classes = int(raw["num_classes"])
        features = np.asarray(raw["features"], dtype=np.float64)
        labels = np.asarray(raw["labels"], dtype=np.intp)
        edges_in = [(int(s), int(d)) for s, d in raw["edges"]]
        masks = {m: np.asarray(raw[f"{m}_mask"], dtype=np.intp) for m in ("train", "val", "test")}
    except (KeyError, TypeError, ValueError) as err:
        raise DatasetError(f"{path}: invalid dataset structure: {err}") from err

    if features.ndim != 2 or features.shape[0] != n:
        raise DatasetError(f"{path}: features must be ({n}, d), got {features.shape}")
    edges = sorted({(s, d) for s, d in edges_in if s != d})
    ds = GraphDataset(
        features=features,
        edges=edges,
        labels=labels,
        train_mask=masks["train"],
        val_mask=masks["val"],
        test_mask=masks["test"],
        num_classes=num_classes,
    )
    ds.validate()
    return ds


def save_dataset(dataset: GraphDataset, path) -> None:
    """Canonical serialization: sorted edges, fixed key order, repr floats."""
    dataset.validate()
    doc = {
        "num_nodes": dataset.num_nodes,
        "num_classes": dataset.num_classes,
        "features": [[float(v) for v in row] for row in dataset.features],
        "edges": [[int(s), int(d)] for s, d in sorted(dataset.edges)],
        "labels": [int(v) for v in dataset.labels],
        "train_mask": [int(v) for v in dataset.train_mask],
        "val_mask": [int(v) for v in dataset.val_mask],
        "test_mask": [int(v) for v in dataset.test_mask],
    }
    with _open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


@dataclass
class SbmSpec:
    """Stochastic block model with class-clustered Gaussian features.

    ``intra_prob`` may be a single probability or one per class (class c's
    internal pairs connect with intra_prob[c]).
    """

    nodes_per_class: int = 100
    num_classes: int = 3
    intra_prob: float | Sequence[float] = 0.1
    inter_prob: float = 0.05
    feature_dim: int = 6
    separation: float = 0.5
    noise_std: float = 1.0
    seed: int = 0

    def intra_list(self) -> list[float]:
        if isinstance(self.intra_prob, (int, float)):
            return [float(self.intra_prob)] * self.num_classes
        probs = [float(p) for p in self.intra_prob]
        if len(probs) != self.num_classes:
            raise DatasetError("intra_prob list must have one entry per class")
        return probs

    def validate(self) -> None:
        if self.nodes_per_class < 1 or self.num_classes < 1:
            raise DatasetError("nodes_per_class and num_classes must be positive")
        if self.feature_dim < 1:
            raise DatasetError("feature_dim must be positive")
        if self.separation < 0 or self.noise_std < 0:
            raise DatasetError("separation and noise_std must be non-negative")
        for p in self.intra_list() + [float(self.inter_prob)]:
            if not 0.0 <= p <= 1.0:
                raise DatasetError(f"edge probability {p} outside [0, 1]")


def generate_sbm(spec: SbmSpec) -> GraphDataset:
    """Sample an SBM graph with features clustered per class.

    Undirected pair (i, j) is connected with the class-dependent probability
    and stored as both directed edges. Masks are a stratified 10/20/70
    train/val/test split per class. Fully seed-deterministic.
    """
    spec.validate()
    rng = RngState(spec.seed)
    n = spec.nodes_per_class * spec.num_classes
    labels = np.repeat(np.arange(spec.num_classes), spec.nodes_per_class)
    intra = spec.intra_list()

    u = rng.substream("edges").random((n, n))
    edges: list[tuple[int, int]] = []
    for i in range(n):
        for j in range(i + 1, n):
            p = intra[labels[i]] if labels[i] == labels[j] else spec.inter_prob
            if u[i, j] < p:
                edges.append((i, j))
                edges.append((j, i))

    centers = np.zeros((spec.num_classes, spec.feature_dim))
    for c in range(spec.num_classes):
        centers[c, c % spec.feature_dim] = spec.separation
    noise = rng.substream("features").standard_normal((n, spec.feature_dim))
    features = centers[labels] + spec.noise_std * noise

    train, val, test = [], [], []
    for c in range(spec.num_classes):
        members = np.where(labels == c)[0]
        order = rng.substream("masks", c).permutation(members)
        n_train = max(1, int(round(0.1 * len(order))))
        n_val = max(1, int(round(0.2 * len(order))))
        train.extend(order[:n_train].tolist())
        val.extend(order[n_train : n_train + n_val].tolist())
        test.extend(order[n_train + n_val :].tolist())

    ds = GraphDataset(
        features=features,
        edges=sorted(edges),
        labels=labels,
        train_mask=np.asarray(sorted(train), dtype=np.intp),
        val_mask=np.asarray(sorted(val), dtype=np.intp),
        test_mask=np.asarray(sorted(test), dtype=np.intp),
        num_classes=spec.num_classes,
    )
    ds.validate()
    return ds


def inject_edge_noise(dataset: GraphDataset, fraction: float, seed: int) -> GraphDataset:
    """Return a copy with ceil(fraction * |E|) new directed edges sampled
    uniformly from the absent (non-self) pairs; existing edges are kept."""
    if fraction < 0:
        raise DatasetError("fraction must be non-negative")
    n = dataset.num_nodes
    existing = set(dataset.edges)
    absent = [(i, j) for i in range(n) for j in range(n) if i != j and (i, j) not in existing]
    if not absent:
        raise DatasetError("graph is already complete; no room for noise edges")
    count = math.ceil(fraction * len(dataset.edges))
    if count == 0:
        return replace(dataset, edges=list(dataset.edges))
    if count > len(absent):
        raise DatasetError(f"cannot add {count} edges; only {len(absent)} pairs are absent")
    rng = RngState(seed)
    picks = rng.substream("edge-noise").choice(len(absent), size=count, replace=False)
    new_edges = sorted(existing | {absent[i] for i in picks.tolist()})
    out = replace(dataset, edges=new_edges)
    out.validate()
    return out
