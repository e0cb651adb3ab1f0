"""Optimization loop: classification loss plus the annealed adjacency loss,
fixed-degree ablations, and evaluation bookkeeping."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .autodiff import (
    ArgumentError,
    Tape,
    Tensor,
    add,
    clamp,
    constant,
    log,
    mul,
    scale,
    sub,
    tsum,
)
from .data import GraphDataset
from .gcn import GcnParams, accuracy, gcn_forward, masked_cross_entropy
from .generator import DggOutput, DggParams, dgg_forward
from .sampling import RngState


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 300
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    tau: float = 1.0
    lam: float = 1.0
    mode: str = "soft"
    symmetric: bool = False
    binarize: bool = False
    intermediate_weight: float = 0.0      # w0; 0 trains with the downstream loss only
    anneal_epochs: int | None = None      # T_a; defaults to epochs // 2
    fixed_k: int | None = None            # pin every node's degree, disabling the estimator
    latent_dim: int = 32
    hidden_dim: int = 64
    encoder_hidden: int | None = -1       # -1: same as latent_dim; None/0: single affine layer
    edge_hidden: int | None = -1
    edge_noise: bool = True
    degree_noise: bool = True
    kl_weight: float = 0.0                # optional prior pull on (mu, sigma); off by default
    dropout: float = 0.0
    gumbel_form: str = "standard"
    use_input_graph: bool = False         # bypass the generator; plain GCN on the dataset edges

    def resolved_anneal(self) -> int:
        return self.epochs // 2 if self.anneal_epochs is None else self.anneal_epochs

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ArgumentError("learning rate must be positive")
        if self.intermediate_weight < 0:
            raise ArgumentError("intermediate loss weight must be non-negative")
        if self.resolved_anneal() > self.epochs:
            raise ArgumentError("anneal horizon cannot exceed epochs")
        if self.epochs < 0:
            raise ArgumentError("epochs must be non-negative")
        if self.mode not in ("soft", "straight_through"):
            raise ArgumentError(f"unknown mode {self.mode!r}")


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)       # total optimized loss
    train_cls_loss: list[float] = field(default_factory=list)   # classification term alone
    val_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    k_mean: list[float] = field(default_factory=list)
    k_std: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_acc: float = 0.0
    test_acc: float = 0.0
    wall_clock: float = 0.0

    def to_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "train_cls_loss": self.train_cls_loss,
            "val_loss": self.val_loss,
            "train_acc": self.train_acc,
            "val_acc": self.val_acc,
            "k_mean": self.k_mean,
            "k_std": self.k_std,
            "best_epoch": self.best_epoch,
            "best_val_acc": self.best_val_acc,
            "test_acc": self.test_acc,
            "wall_clock": self.wall_clock,
        }


@dataclass
class TrainResult:
    report: TrainReport
    best_params: dict[str, np.ndarray]    # parameter snapshot at the best validation epoch
    best_adjacency: np.ndarray | None
    meta: dict                            # enough to rebuild the model for evaluation


class Adam:
    """Bias-corrected adaptive-moment optimizer over named parameters."""

    def __init__(self, named_params: Sequence[tuple[str, Tensor]], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.values) for name, p in self.params}
        self.v = {name: np.zeros_like(p.values) for name, p in self.params}

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, p in self.params:
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient in parameter {name!r}")
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            p.values -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def clear_grads(self) -> None:
        for _, p in self.params:
            p.grad = None


def anneal_weight(epoch: int, w0: float, anneal_epochs: int) -> float:
    """Linear decay from w0 to exactly 0 at epoch >= anneal_epochs."""
    if epoch < 0:
        raise ArgumentError("epoch must be non-negative")
    if anneal_epochs <= 0:
        return 0.0
    return w0 * max(0.0, 1.0 - epoch / anneal_epochs)


_BCE_EPS = 1e-15


def intermediate_adjacency_loss(a: Tensor, labels, train_mask) -> Tensor:
    """Binary cross-entropy pushing the generated adjacency toward
    same-class-only edges, averaged over ordered pairs of training nodes."""
    labels = np.asarray(labels, dtype=np.intp)
    idx = np.asarray(train_mask, dtype=np.intp).reshape(-1)
    if idx.size < 2:
        raise ArgumentError("intermediate loss needs at least two labeled training nodes")
    n = a.shape[0]
    pair_mask = np.zeros((n, n))
    pair_mask[np.ix_(idx, idx)] = 1.0
    same = (labels[:, None] == labels[None, :]).astype(np.float64)

    ac = clamp(a, _BCE_EPS, 1.0 - _BCE_EPS)
    pos = mul(constant(same * pair_mask), log(ac))
    negt = mul(constant((1.0 - same) * pair_mask), log(sub(1.0, ac)))
    total = tsum(add(pos, negt))
    return scale(total, -1.0 / pair_mask.sum())


def _kl_to_standard_normal(mu: Tensor, sigma: Tensor) -> Tensor:
    # 0.5 * mean(sigma^2 + mu^2 - 1 - 2 log sigma)
    term = sub(add(mul(sigma, sigma), mul(mu, mu)), add(constant(np.ones(mu.shape)), scale(log(sigma), 2.0)))
    return scale(tsum(term), 0.5 / mu.shape[0])


def _dense_input_adjacency(dataset: GraphDataset) -> np.ndarray:
    return dataset.dense_adjacency()


def _forward(
    x: Tensor,
    dataset: GraphDataset,
    config: TrainConfig,
    dgg_params: DggParams | None,
    gcn_params: GcnParams,
    rng: RngState,
    noise_key: int,
) -> tuple[Tensor, Tensor, DggOutput | None]:
    """One model forward: (logits, adjacency, generator output or None)."""
    if config.use_input_graph:
        adjacency = constant(_dense_input_adjacency(dataset))
        logits = gcn_forward(x, adjacency, gcn_params, dropout=config.dropout, rng=rng, noise_key=noise_key)
        return logits, adjacency, None
    out = dgg_forward(
        x,
        dgg_params,
        mode=config.mode,
        symmetric=config.symmetric,
        rng=rng,
        fixed_k=config.fixed_k,
        binarize=config.binarize,
        edge_noise=config.edge_noise,
        degree_noise=config.degree_noise,
        noise_key=noise_key,
        gumbel_form=config.gumbel_form,
    )
    logits = gcn_forward(out.latent, out.adjacency, gcn_params, dropout=config.dropout, rng=rng, noise_key=noise_key)
    return logits, out.adjacency, out


def build_models(dataset: GraphDataset, config: TrainConfig, rng: RngState) -> tuple[DggParams | None, GcnParams]:
    if config.use_input_graph:
        gcn = GcnParams(dataset.feature_dim, config.hidden_dim, dataset.num_classes, rng)
        return None, gcn
    dgg_params = DggParams(
        dataset.feature_dim,
        config.latent_dim,
        rng,
        tau=config.tau,
        lam=config.lam,
        encoder_hidden=config.encoder_hidden,
        edge_hidden=config.edge_hidden,
    )
    gcn = GcnParams(config.latent_dim, config.hidden_dim, dataset.num_classes, rng)
    return dgg_params, gcn


def named_params(dgg_params: DggParams | None, gcn_params: GcnParams) -> list[tuple[str, Tensor]]:
    out = [] if dgg_params is None else dgg_params.named_params()
    return out + gcn_params.named_params()


def train(dataset: GraphDataset, config: TrainConfig) -> TrainResult:
    """Full optimization run; selects the test accuracy at the best
    validation epoch and snapshots that epoch's parameters."""
    config.validate()
    dataset.validate()
    t0 = time.perf_counter()
    rng = RngState(config.seed)
    x = Tensor(dataset.features)
    dgg_params, gcn_params = build_models(dataset, config, rng)
    params = named_params(dgg_params, gcn_params)
    opt = Adam(params, config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    t_anneal = config.resolved_anneal()

    report = TrainReport()
    best_params = {name: p.values.copy() for name, p in params}
    best_adjacency: np.ndarray | None = None
    best_epoch = -1
    best_val = -1.0
    test_at_best = 0.0

    for epoch in range(config.epochs):
        opt.clear_grads()
        with Tape() as tape:
            logits, adjacency, out = _forward(x, dataset, config, dgg_params, gcn_params, rng, epoch)
            cls_loss = masked_cross_entropy(logits, dataset.labels, dataset.train_mask)
            total = cls_loss
            w = anneal_weight(epoch, config.intermediate_weight, t_anneal)
            if w > 0.0:
                total = add(total, scale(intermediate_adjacency_loss(adjacency, dataset.labels, dataset.train_mask), w))
            if config.kl_weight > 0.0 and out is not None and out.mu is not None:
                total = add(total, scale(_kl_to_standard_normal(out.mu, out.sigma), config.kl_weight))
        total_val = total.item()
        if not np.isfinite(total_val):
            raise TrainingError(f"non-finite loss at epoch {epoch}")
        tape.backward(total)

        # Metrics and the best-model snapshot describe this epoch's forward
        # pass, i.e. the parameters before the update below.
        val_loss = masked_cross_entropy(logits, dataset.labels, dataset.val_mask).item()
        train_acc = accuracy(logits, dataset.labels, dataset.train_mask)
        val_acc = accuracy(logits, dataset.labels, dataset.val_mask)
        report.train_loss.append(total_val)
        report.train_cls_loss.append(cls_loss.item())
        report.val_loss.append(val_loss)
        report.train_acc.append(train_acc)
        report.val_acc.append(val_acc)
        report.k_mean.append(out.degree_mean if out is not None else 0.0)
        report.k_std.append(out.degree_std if out is not None else 0.0)

        if val_acc > best_val:
            best_val = val_acc
            best_epoch = epoch
            test_at_best = accuracy(logits, dataset.labels, dataset.test_mask)
            best_adjacency = adjacency.values.copy()
            best_params = {name: p.values.copy() for name, p in params}

        opt.step()

    report.best_epoch = best_epoch
    report.best_val_acc = max(best_val, 0.0)
    report.test_acc = test_at_best
    report.wall_clock = time.perf_counter() - t0

    meta = {
        "feature_dim": dataset.feature_dim,
        "num_classes": dataset.num_classes,
        "num_nodes": dataset.num_nodes,
        "seed": config.seed,
        "best_epoch": best_epoch,
        "config": _config_dict(config),
    }
    return TrainResult(report=report, best_params=best_params, best_adjacency=best_adjacency, meta=meta)


def _config_dict(config: TrainConfig) -> dict:
    from dataclasses import asdict

    return asdict(config)


def evaluate_checkpoint(dataset: GraphDataset, meta: dict, tensors: dict[str, np.ndarray]) -> dict:
    """Re-run the best epoch's forward pass from a checkpoint and report
    test accuracy plus degree statistics. Matches the training report
    exactly because the same seed and epoch noise key are reused."""
    from .checkpoint import CheckpointError

    for key, actual in (
        ("feature_dim", dataset.feature_dim),
        ("num_classes", dataset.num_classes),
        ("num_nodes", dataset.num_nodes),
    ):
        if meta.get(key) != actual:
            raise CheckpointError(f"checkpoint/dataset mismatch: {key} is {meta.get(key)}, dataset has {actual}")
    if meta.get("best_epoch", -1) < 0:
        raise CheckpointError("checkpoint does not record a trained epoch")

    config = TrainConfig(**meta["config"])
    rng = RngState(config.seed)
    dgg_params, gcn_params = build_models(dataset, config, rng)
    for name, p in named_params(dgg_params, gcn_params):
        if name not in tensors:
            raise CheckpointError(f"checkpoint is missing parameter {name!r}")
        if tensors[name].shape != p.values.shape:
            raise CheckpointError(f"parameter {name!r} has shape {tensors[name].shape}, expected {p.values.shape}")
        p.values = tensors[name].copy()

    x = Tensor(dataset.features)
    logits, _, out = _forward(x, dataset, config, dgg_params, gcn_params, rng, meta["best_epoch"])
    return {
        "test_acc": accuracy(logits, dataset.labels, dataset.test_mask),
        "val_acc": accuracy(logits, dataset.labels, dataset.val_mask),
        "k_mean": out.degree_mean if out is not None else 0.0,
        "k_std": out.degree_std if out is not None else 0.0,
        "best_epoch": meta["best_epoch"],
    }


def fixed_k_bypass(x, params: DggParams, k: int, rng: RngState, **kwargs) -> DggOutput:
    """Generator forward with the degree estimator disabled and every node's
    degree pinned to k."""
    return dgg_forward(x, params, rng=rng, fixed_k=int(k), **kwargs)


def ablate(
    dataset: GraphDataset,
    config: TrainConfig,
    k_values: Sequence[int] = (1, 5, 10),
    seeds: Sequence[int] = (0, 1, 2),
) -> tuple[list[dict], list[dict]]:
    """Run the degree/noise ablation grid and aggregate mean accuracy.

    Variants: fixed-k for each k; edge ranking without noise; degree
    estimation without noise; the full generator.
    """
    rows: list[dict] = []
    for seed in seeds:
        for k in k_values:
            cfg = replace(config, seed=seed, fixed_k=int(k))
            rows.append({"variant": "fixed_k", "k": int(k), "seed": seed,
                         "accuracy": train(dataset, cfg).report.test_acc})
        cfg = replace(config, seed=seed, edge_noise=False)
        rows.append({"variant": "det_edge_ranking", "k": None, "seed": seed,
                     "accuracy": train(dataset, cfg).report.test_acc})
        cfg = replace(config, seed=seed, degree_noise=False)
        rows.append({"variant": "det_degree_estimation", "k": None, "seed": seed,
                     "accuracy": train(dataset, cfg).report.test_acc})
        cfg = replace(config, seed=seed)
        rows.append({"variant": "full", "k": None, "seed": seed,
                     "accuracy": train(dataset, cfg).report.test_acc})

    aggregates: list[dict] = []
    seen = []
    for row in rows:
        key = (row["variant"], row["k"])
        if key not in seen:
            seen.append(key)
    for variant, k in seen:
        accs = [r["accuracy"] for r in rows if (r["variant"], r["k"]) == (variant, k)]
        aggregates.append({"variant": variant, "k": k, "mean_accuracy": float(np.mean(accs)),
                           "std_accuracy": float(np.std(accs))})
    return rows, aggregates
