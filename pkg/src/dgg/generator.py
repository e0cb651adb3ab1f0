"""Differentiable graph generation.

Pipeline per forward pass: encode node features into a latent space, embed
every ordered node pair as a candidate edge, refine edge embeddings by
message passing over the adjoint (line) graph of the complete graph, score
edges into probabilities, draw Gumbel-softmax edge samples, estimate a
continuous per-node degree by Gaussian reparameterization, and gate the
per-row sorted edge samples with a smoothed step whose inflection sits at
the learned degree. The result is a dense adjacency in [0,1] plus the
latent features for the downstream graph convolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ArgumentError,
    Tensor,
    add,
    apply_perm_rows,
    argsort_descending,
    argsort_rows_descending,
    clamp,
    concat,
    constant,
    gather_rows,
    invert_perms,
    l1_norm_rows,
    mul,
    log,
    permute_apply,
    reshape,
    scale,
    scale_rows,
    sigmoid,
    softmax_rows,
    softplus,
    sub,
    sum_blocks_rows,
    tanh,
    transpose,
)
from .nn import Affine, Mlp
from .sampling import RngState


class DggParams:
    """All learnable weights of the generator plus its two temperatures.

    ``tau`` scales the Gumbel-softmax logits; ``lam`` controls the sharpness
    of the degree gate. The refinement map is a single affine layer so that
    averaging over adjoint-graph neighbors commutes with applying it, which
    keeps the refinement stage quadratic in the node count.
    """

    def __init__(
        self,
        feature_dim: int,
        latent_dim: int,
        rng: RngState,
        *,
        tau: float = 1.0,
        lam: float = 1.0,
        encoder_hidden: int | None = -1,
        edge_hidden: int | None = -1,
    ):
        if tau <= 0 or lam <= 0:
            raise ArgumentError("temperatures tau and lam must be positive")
        if encoder_hidden == -1:
            encoder_hidden = latent_dim
        if edge_hidden == -1:
            edge_hidden = latent_dim
        self.feature_dim = feature_dim
        self.latent_dim = latent_dim
        self.tau = float(tau)
        self.lam = float(lam)

        enc_sizes = [feature_dim, latent_dim] if not encoder_hidden else [feature_dim, encoder_hidden, latent_dim]
        embed_sizes = [2 * latent_dim, latent_dim] if not edge_hidden else [2 * latent_dim, edge_hidden, latent_dim]
        self.encoder = Mlp(enc_sizes, rng, "encoder")
        self.edge_embed = Mlp(embed_sizes, rng, "edge_embed")
        self.edge_refine = Affine(2 * latent_dim, latent_dim, rng, "edge_refine")
        self.edge_score = Affine(latent_dim, 1, rng, "edge_score")
        self.degree_mean = Affine(latent_dim, latent_dim, rng, "degree_mean")
        self.degree_std = Affine(latent_dim, latent_dim, rng, "degree_std")
        self.degree_decoder = Affine(latent_dim, 1, rng, "degree_decoder")

    def named_params(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for module in (
            self.encoder,
            self.edge_embed,
            self.edge_refine,
            self.edge_score,
            self.degree_mean,
            self.degree_std,
            self.degree_decoder,
        ):
            out.extend(module.named_params())
        return out


@dataclass
class DggOutput:
    adjacency: Tensor       # (N, N), entries in [0, 1]
    latent: Tensor          # (N, d'), passed through to the GCN
    degrees: Tensor         # (N,), clamped to [0, N]
    edge_samples: Tensor    # (N, N), row-stochastic
    degree_mean: float
    degree_std: float
    mu: Tensor | None = None
    sigma: Tensor | None = None
    raw_degrees: np.ndarray | None = None   # pre-clamp degree values (diagnostic)


def _as_input(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _node_ids(n: int, node_ids) -> np.ndarray:
    if node_ids is None:
        return np.arange(n)
    ids = np.asarray(node_ids, dtype=np.intp)
    if ids.shape != (n,) or not np.array_equal(np.sort(ids), np.arange(n)):
        raise ArgumentError("node_ids must be a permutation of range(N)")
    return ids


def node_encode(x, params: DggParams) -> Tensor:
    """Project raw node features into the latent space."""
    x = _as_input(x)
    if x.values.ndim != 2 or x.shape[1] != params.feature_dim:
        raise ArgumentError(
            f"node_encode: expected features of shape (N, {params.feature_dim}), got {x.shape}"
        )
    return params.encoder(x)


def local_edge_embed(xhat: Tensor, params: DggParams) -> Tensor:
    """Embed every ordered node pair (including self-pairs): (N, N, d')."""
    n = xhat.shape[0]
    src = np.repeat(np.arange(n), n)
    dst = np.tile(np.arange(n), n)
    pairs = concat(gather_rows(xhat, src), gather_rows(xhat, dst), axis=1)
    c = params.edge_embed(pairs)
    return reshape(c, (n, n, params.latent_dim))


def adjoint_neighbors(n: int) -> list[list[int]]:
    """Adjacency lists of the adjoint (line) graph of the directed complete
    graph with self-loops. Edge (i, j) has id i*n + j; two distinct edges
    are neighbors iff they share an endpoint. Returns empty lists for n < 2.
    """
    if n < 2:
        return [[] for _ in range(max(n, 0) ** 2)]
    out: list[list[int]] = []
    for i in range(n):
        for j in range(n):
            nbrs = set()
            for v in range(n):
                nbrs.add(i * n + v)
                nbrs.add(v * n + i)
                nbrs.add(j * n + v)
                nbrs.add(v * n + j)
            nbrs.discard(i * n + j)
            out.append(sorted(nbrs))
    return out


def edge_refine(c: Tensor, params: DggParams) -> Tensor:
    """Update each edge embedding from the mean over its adjoint-graph
    neighbors of an affine map of (own embedding || difference to neighbor).

    Because the map is affine, the neighbor mean factors through it; the
    per-edge neighbor means are assembled from row/column sums in O(N^2)
    instead of enumerating the O(N^3) neighbor pairs.
    """
    if c.values.ndim != 3 or c.shape[0] != c.shape[1]:
        raise ArgumentError(f"edge_refine: expected (N, N, d') embeddings, got {c.shape}")
    n, _, dl = c.shape
    cf = reshape(c, (n * n, dl))
    src = np.repeat(np.arange(n), n)
    dst = np.tile(np.arange(n), n)
    swap_idx = dst * n + src

    row_sums = sum_blocks_rows(cf, n)            # sum over v of c[(i, v)]
    c_swap = gather_rows(cf, swap_idx)           # row (i, j) holds c[(j, i)]
    col_sums = sum_blocks_rows(c_swap, n)        # sum over u of c[(u, i)]
    incident = add(row_sums, col_sums)
    diag_idx = np.arange(n) * n + np.arange(n)
    c_diag = gather_rows(cf, diag_idx)

    inc_src = gather_rows(incident, src)
    inc_dst = gather_rows(incident, dst)
    diag_src = gather_rows(c_diag, src)
    diag_dst = gather_rows(c_diag, dst)

    # Inclusion-exclusion over the four incident row/column sums, minus the
    # edge itself; self-loop rows have the two-set variant.
    t_off = sub(sub(sub(sub(add(inc_src, inc_dst), diag_src), diag_dst), scale(cf, 2.0)), c_swap)
    t_diag = sub(inc_src, scale(cf, 2.0))
    is_diag = (src == dst).astype(np.float64)
    t = add(scale_rows(t_off, constant(1.0 - is_diag)), scale_rows(t_diag, constant(is_diag)))

    counts = np.where(src == dst, 2 * n - 2, 4 * n - 5).astype(np.float64)
    has_nb = (counts > 0).astype(np.float64)
    mean_nb = scale_rows(t, constant(has_nb / np.maximum(counts, 1.0)))
    diff = scale_rows(sub(cf, mean_nb), constant(has_nb))
    refined = params.edge_refine(concat(cf, diff, axis=1))
    return reshape(refined, (n, n, dl))


def edge_probabilities(c_refined: Tensor, params: DggParams) -> Tensor:
    """Score each candidate edge into (0, 1) via a sigmoid head."""
    if c_refined.values.ndim != 3 or c_refined.shape[0] != c_refined.shape[1]:
        raise ArgumentError(f"edge_probabilities: expected (N, N, d'), got {c_refined.shape}")
    n = c_refined.shape[0]
    flat = reshape(c_refined, (n * n, params.latent_dim))
    scores = params.edge_score(flat)
    return reshape(sigmoid(scores), (n, n))


def _edge_noise(rng: RngState | None, n: int, ids: np.ndarray, noise_key, per_node: bool) -> np.ndarray:
    """Gumbel noise keyed to node identities so relabeling permutes it."""
    if rng is None:
        raise ArgumentError("an RngState is required when edge noise is enabled")
    if per_node:
        draws = [rng.gumbel((1,), "edge", noise_key, int(ids[i]))[0] for i in range(n)]
        return np.asarray(draws)[:, None] * np.ones((1, n))
    rows = np.stack([rng.gumbel((n,), "edge", noise_key, int(ids[i])) for i in range(n)])
    return rows[:, ids]


def gumbel_edge_samples(
    p: Tensor,
    tau: float,
    rng: RngState | None,
    *,
    node_ids=None,
    noise_key=0,
    form: str = "standard",
    noisy: bool = True,
) -> Tensor:
    """Row-stochastic relaxed edge samples from edge probabilities.

    The standard form is softmax_j((log p_ij + g_ij) / tau) with independent
    per-edge Gumbel noise. form="printed" keeps the additive-temperature,
    per-node-noise variant for comparison; both noise terms are constants to
    the tape.
    """
    if tau <= 0:
        raise ArgumentError(f"gumbel temperature must be positive, got {tau}")
    if form not in ("standard", "printed"):
        raise ArgumentError(f"unknown gumbel form {form!r}")
    n = p.shape[0]
    if p.values.ndim != 2 or p.shape[1] != n:
        raise ArgumentError(f"gumbel_edge_samples: expected square probabilities, got {p.shape}")
    ids = _node_ids(n, node_ids)

    if noisy:
        g = _edge_noise(rng, n, ids, noise_key, per_node=(form == "printed"))
    else:
        g = np.zeros((n, n))

    if form == "standard":
        logits = scale(add(log(p), constant(g)), 1.0 / tau)
    else:
        logits = add(add(log(p), constant(g)), float(tau))
    return softmax_rows(logits)


def degree_encode(
    xhat: Tensor,
    params: DggParams,
    rng: RngState | None,
    *,
    node_ids=None,
    noise_key=0,
    noisy: bool = True,
) -> Tensor:
    """Latent degree code z = mu + eps * sigma (eps constant to the tape)."""
    z, _, _ = _degree_encode_full(xhat, params, rng, node_ids=node_ids, noise_key=noise_key, noisy=noisy)
    return z


def _degree_encode_full(xhat, params, rng, *, node_ids=None, noise_key=0, noisy=True):
    n = xhat.shape[0]
    ids = _node_ids(n, node_ids)
    mu = params.degree_mean(xhat)
    sigma = softplus(params.degree_std(xhat))
    if noisy:
        if rng is None:
            raise ArgumentError("an RngState is required when degree noise is enabled")
        eps = np.stack([rng.gaussian((params.latent_dim,), "degree", noise_key, int(ids[i])) for i in range(n)])
    else:
        eps = np.zeros((n, params.latent_dim))
    z = add(mu, mul(sigma, constant(eps)))
    return z, mu, sigma


def degree_decode(z: Tensor, e: Tensor, params: DggParams, n_limit: float | None = None) -> Tensor:
    """Continuous per-node degree: decoded offset plus the L1 norm of the
    node's edge samples (exactly 1 for softmax rows), clamped to [0, N]."""
    n = e.shape[0]
    if n_limit is None:
        n_limit = float(n)
    dec = reshape(params.degree_decoder(z), (z.shape[0],))
    return clamp(add(dec, l1_norm_rows(e)), 0.0, float(n_limit))


def smooth_heaviside_gate(k: Tensor, n: int, lam: float) -> Tensor:
    """Soft step over rank positions 1..n: ~1 below k, 0.5 at k, ~0 above.

    Monotone non-increasing in the rank and non-decreasing in k; lam -> 0
    recovers the hard step.
    """
    if lam <= 0:
        raise ArgumentError(f"gate temperature must be positive, got {lam}")
    d = constant(np.arange(1, n + 1, dtype=np.float64))
    t = scale(sub(d, k), 1.0 / lam)
    return sub(1.0, scale(add(tanh(t), 1.0), 0.5))


def _gate_matrix(k: Tensor, ranks: np.ndarray, lam: float) -> Tensor:
    if lam <= 0:
        raise ArgumentError(f"gate temperature must be positive, got {lam}")
    n = ranks.shape[0]
    kmat = scale_rows(constant(np.ones_like(ranks)), k)
    t = scale(sub(constant(ranks), kmat), 1.0 / lam)
    return sub(1.0, scale(add(tanh(t), 1.0), 0.5))


def topk_select(e_row: Tensor, gate: Tensor) -> Tensor:
    """Gate the sorted edge samples and restore the original order.

    Gradients reach the edge samples through the permutation routing and
    the degree through the gate.
    """
    perm = argsort_descending(e_row)
    selected = mul(permute_apply(e_row, perm), gate)
    return permute_apply(selected, invert_perms(perm))


def dgg_forward(
    x,
    params: DggParams,
    mode: str = "soft",
    symmetric: bool = False,
    rng: RngState | None = None,
    *,
    fixed_k: float | None = None,
    binarize: bool = False,
    edge_noise: bool = True,
    degree_noise: bool = True,
    node_ids=None,
    noise_key=0,
    gumbel_form: str = "standard",
) -> DggOutput:
    """Generate an adjacency matrix (and the latent features) from node
    features.

    mode="soft" keeps the smooth gate in forward and backward;
    mode="straight_through" uses the hard step (rank <= k, inclusive) in the
    forward values while gradients follow the smooth gate. ``fixed_k``
    disables the degree estimator and pins every node's degree.
    """
    if mode not in ("soft", "straight_through"):
        raise ArgumentError(f"unknown mode {mode!r}")
    x = _as_input(x)
    n = x.shape[0]
    if n < 1:
        raise ArgumentError("dgg_forward requires at least one node")
    ids = _node_ids(n, node_ids)

    xhat = node_encode(x, params)
    c = local_edge_embed(xhat, params)
    c_refined = edge_refine(c, params)
    p = edge_probabilities(c_refined, params)
    e = gumbel_edge_samples(
        p, params.tau, rng, node_ids=ids, noise_key=noise_key, form=gumbel_form, noisy=edge_noise
    )

    mu = sigma = None
    if fixed_k is not None:
        if not 1 <= fixed_k <= n:
            raise ArgumentError(f"fixed_k must lie in [1, {n}], got {fixed_k}")
        k = constant(np.full(n, float(fixed_k)))
        raw_degrees = k.values.copy()
    else:
        z, mu, sigma = _degree_encode_full(
            xhat, params, rng, node_ids=ids, noise_key=noise_key, noisy=degree_noise
        )
        dec = reshape(params.degree_decoder(z), (n,))
        raw = add(dec, l1_norm_rows(e))
        raw_degrees = raw.values.copy()
        k = clamp(raw, 0.0, float(n))

    ranks = np.broadcast_to(np.arange(1, n + 1, dtype=np.float64), (n, n))
    smooth = _gate_matrix(k, ranks, params.lam)

    perms = argsort_rows_descending(e)
    e_sorted = apply_perm_rows(e, perms)
    if mode == "soft":
        a_sorted = mul(e_sorted, smooth)
    else:
        hard = (ranks <= k.values[:, None]).astype(np.float64)
        if binarize:
            soft_sel = mul(e_sorted, smooth)
            a_sorted = add(soft_sel, constant(hard - soft_sel.values))
        else:
            gate = add(smooth, constant(hard - smooth.values))
            a_sorted = mul(e_sorted, gate)
    adjacency = apply_perm_rows(a_sorted, invert_perms(perms))
    if symmetric:
        adjacency = scale(add(adjacency, transpose(adjacency)), 0.5)

    return DggOutput(
        adjacency=adjacency,
        latent=xhat,
        degrees=k,
        edge_samples=e,
        degree_mean=float(k.values.mean()),
        degree_std=float(k.values.std()),
        mu=mu,
        sigma=sigma,
    )
