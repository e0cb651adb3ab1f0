"""Finite-difference verification suite over every primitive and the
composite generator + GCN loss. Backs the gradcheck CLI command."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, constant, finite_difference_check
from .data import SbmSpec, generate_sbm
from .gcn import GcnParams, gcn_forward, masked_cross_entropy, normalize_adjacency
from .generator import DggParams, dgg_forward, smooth_heaviside_gate, topk_select
from .sampling import RngState
from .training import intermediate_adjacency_loss

PRIMITIVE_TOL = 1e-6
COMPOSITE_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def _check(name, build, params, gen, tol=PRIMITIVE_TOL) -> CheckResult:
    # Fixed random weighting turns the op output into a scalar loss that
    # exercises the adjoint in every slot.
    w = constant(gen.uniform(0.5, 1.5, build().shape))
    report = finite_difference_check(
        lambda: ad.tsum(ad.mul(build(), w)), params, step=1e-5, tolerance=tol, denom_floor=1e-9
    )
    return CheckResult(name, report.max_rel_err, tol)


def _scalar_check(name, build, params, tol=PRIMITIVE_TOL) -> CheckResult:
    report = finite_difference_check(build, params, step=1e-5, tolerance=tol, denom_floor=1e-9)
    return CheckResult(name, report.max_rel_err, tol)


def primitive_checks(seed: int = 0, inject_bug: bool = False) -> list[CheckResult]:
    gen = np.random.Generator(np.random.Philox(key=seed))
    results: list[CheckResult] = []

    def fresh(shape, low=-1.5, high=1.5):
        return Tensor(gen.uniform(low, high, shape), requires_grad=True)

    a = fresh((3, 4))
    b = fresh((4, 2))
    results.append(_check("matmul", lambda: ad.matmul(a, b), [("a", a), ("b", b)], gen))

    x = fresh((3, 3))
    y = fresh((3, 3))
    s = fresh(())
    results.append(_check("add", lambda: ad.add(x, y), [("x", x), ("y", y)], gen))
    results.append(_check("add_scalar", lambda: ad.add(x, s), [("x", x), ("s", s)], gen))
    results.append(_check("sub", lambda: ad.sub(x, y), [("x", x), ("y", y)], gen))
    results.append(_check("mul", lambda: ad.mul(x, y), [("x", x), ("y", y)], gen))
    results.append(_check("neg", lambda: ad.neg(x), [("x", x)], gen))
    results.append(_check("scale", lambda: ad.scale(x, -0.7), [("x", x)], gen))

    denom = Tensor(gen.uniform(0.5, 2.0, (3, 3)) * gen.choice([-1.0, 1.0], (3, 3)), requires_grad=True)
    results.append(_check("div", lambda: ad.div(x, denom), [("x", x), ("d", denom)], gen))

    pos = Tensor(gen.uniform(0.2, 2.0, (3, 3)), requires_grad=True)
    results.append(_check("exp", lambda: ad.exp(x), [("x", x)], gen))
    results.append(_check("log", lambda: ad.log(pos), [("p", pos)], gen))
    results.append(_check("tanh", lambda: ad.tanh(x), [("x", x)], gen))
    results.append(_check("sigmoid", lambda: ad.sigmoid(x), [("x", x)], gen))
    results.append(_check("softplus", lambda: ad.softplus(x), [("x", x)], gen))
    results.append(_check("powc", lambda: ad.powc(pos, -0.5), [("p", pos)], gen))

    away = Tensor(gen.uniform(0.2, 1.5, (3, 3)) * gen.choice([-1.0, 1.0], (3, 3)), requires_grad=True)
    results.append(_check("relu", lambda: ad.relu(away), [("x", away)], gen))
    results.append(_check("l1_norm_rows", lambda: ad.l1_norm_rows(away), [("x", away)], gen))
    clamped = Tensor(gen.uniform(-2.0, 2.0, (4, 4)), requires_grad=True)
    clamped.values[np.abs(np.abs(clamped.values) - 1.0) < 0.05] = 0.5  # keep off the clamp edges
    results.append(_check("clamp", lambda: ad.clamp(clamped, -1.0, 1.0), [("x", clamped)], gen))

    sm = fresh((2, 4))
    results.append(_check("softmax_rows", lambda: ad.softmax_rows(sm), [("x", sm)], gen))

    results.append(_scalar_check("sum", lambda: ad.tsum(ad.mul(x, x)), [("x", x)]))
    results.append(_scalar_check("mean", lambda: ad.tmean(ad.mul(x, x)), [("x", x)]))
    results.append(_check("row_sum", lambda: ad.row_sum(x), [("x", x)], gen))

    results.append(_check("concat_axis0", lambda: ad.concat(x, y, axis=0), [("x", x), ("y", y)], gen))
    results.append(_check("concat_axis1", lambda: ad.concat(x, y, axis=1), [("x", x), ("y", y)], gen))
    results.append(_check("transpose", lambda: ad.transpose(a), [("a", a)], gen))
    results.append(_check("reshape", lambda: ad.reshape(a, (2, 6)), [("a", a)], gen))

    idx = np.array([0, 2, 2, 1, 0])
    results.append(_check("gather_rows", lambda: ad.gather_rows(x, idx), [("x", x)], gen))
    blocks = fresh((6, 3))
    results.append(_check("sum_blocks_rows", lambda: ad.sum_blocks_rows(blocks, 2), [("x", blocks)], gen))

    v_rows = fresh((3,))
    v_cols = fresh((3,))
    results.append(_check("scale_rows", lambda: ad.scale_rows(x, v_rows), [("x", x), ("v", v_rows)], gen))
    results.append(_check("scale_cols", lambda: ad.scale_cols(x, v_cols), [("x", x), ("v", v_cols)], gen))
    results.append(_check("add_rows", lambda: ad.add_rows(x, v_rows), [("x", x), ("v", v_rows)], gen))
    results.append(_check("add_rowvec", lambda: ad.add_rowvec(x, v_cols), [("x", x), ("b", v_cols)], gen))

    vec = fresh((5,))
    perm = gen.permutation(5)
    results.append(_check("permute_apply", lambda: ad.permute_apply(vec, perm), [("v", vec)], gen))
    perms = np.stack([gen.permutation(3) for _ in range(3)])
    results.append(_check("apply_perm_rows", lambda: ad.apply_perm_rows(x, perms), [("x", x)], gen))

    k = Tensor(np.asarray(2.3), requires_grad=True)
    results.append(_check("smooth_heaviside_gate", lambda: smooth_heaviside_gate(k, 6, 1.0), [("k", k)], gen))

    e_row = Tensor(gen.uniform(0.05, 1.0, (6,)), requires_grad=True)
    results.append(
        _check(
            "topk_select",
            lambda: topk_select(e_row, smooth_heaviside_gate(k, 6, 1.0)),
            [("e", e_row), ("k", k)],
            gen,
        )
    )

    adj = Tensor(gen.uniform(0.1, 1.0, (4, 4)), requires_grad=True)
    results.append(_check("normalize_adjacency", lambda: normalize_adjacency(adj), [("a", adj)], gen))

    if inject_bug:
        # Negative control: a tanh whose adjoint is deliberately wrong must
        # be reported as a failure.
        def bad_tanh(t):
            return ad._unary("bad_tanh", t, np.tanh, lambda g, xv, yv: g * (1.0 - yv))

        results.append(_check("injected_adjoint_bug", lambda: bad_tanh(x), [("x", x)], gen))

    return results


def composite_check(
    nodes: int = 8,
    feature_dim: int = 5,
    latent_dim: int = 6,
    hidden_dim: int = 8,
    num_classes: int = 3,
    seed: int = 0,
    tol: float = COMPOSITE_TOL,
) -> CheckResult:
    """Finite differences through the whole generator -> GCN -> loss path
    with frozen noise, over every parameter."""
    spec = SbmSpec(
        nodes_per_class=max(2, -(-nodes // num_classes)),
        num_classes=num_classes,
        intra_prob=0.3,
        inter_prob=0.1,
        feature_dim=feature_dim,
        separation=1.0,
        noise_std=0.5,
        seed=seed,
    )
    dataset = generate_sbm(spec)
    n = dataset.num_nodes
    rng = RngState(seed)
    dgg_params = DggParams(feature_dim, latent_dim, rng)
    gcn_params = GcnParams(latent_dim, hidden_dim, num_classes, rng)
    params = dgg_params.named_params() + gcn_params.named_params()
    x = Tensor(dataset.features)

    def loss() -> Tensor:
        out = dgg_forward(x, dgg_params, mode="soft", rng=rng)
        logits = gcn_forward(out.latent, out.adjacency, gcn_params)
        cls = masked_cross_entropy(logits, dataset.labels, dataset.train_mask)
        inter = intermediate_adjacency_loss(out.adjacency, dataset.labels, dataset.train_mask)
        return ad.add(cls, ad.scale(inter, 0.5))

    report = finite_difference_check(loss, params, step=1e-5, tolerance=tol, rng=rng)
    return CheckResult(f"composite_dgg_gcn_loss(n={n})", report.max_rel_err, tol)


def run_gradcheck(
    nodes: int = 8,
    feature_dim: int = 5,
    latent_dim: int = 6,
    hidden_dim: int = 8,
    num_classes: int = 3,
    seed: int = 0,
    inject_bug: bool = False,
) -> list[CheckResult]:
    results = primitive_checks(seed=seed, inject_bug=inject_bug)
    results.append(
        composite_check(
            nodes=nodes,
            feature_dim=feature_dim,
            latent_dim=latent_dim,
            hidden_dim=hidden_dim,
            num_classes=num_classes,
            seed=seed,
        )
    )
    return results
