"""Reverse-mode automatic differentiation over dense float64 tensors.

Eager tape execution: every primitive computes its forward value immediately
and, when a Tape is active and some input requires gradients, appends an
adjoint closure to the tape. ``Tape.backward`` replays the adjoints in
reverse record order and populates ``.grad`` on every reachable tensor that
requires gradients. Gradients are single-backward adjoints: they are
assigned, never accumulated across calls.

Scalar broadcasting only (a 0-d operand against any shape); no general
broadcasting. Row/column-wise combinations have dedicated primitives
(scale_rows, add_rows, ...) with explicit adjoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class AutodiffError(Exception):
    """Base class for errors raised by the tensor engine."""


class ShapeError(AutodiffError):
    pass


class DomainError(AutodiffError):
    pass


class NumericError(AutodiffError):
    pass


class ArgumentError(AutodiffError):
    pass


class Tensor:
    """Dense float64 array with an optional gradient buffer.

    ``values`` is the row-major data buffer; ``grad`` is filled in by
    ``Tape.backward`` and always matches ``values`` in shape.
    """

    __slots__ = ("values", "requires_grad", "grad")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy(), requires_grad=False)

    def sum(self) -> "Tensor":
        return tsum(self)

    def mean(self) -> "Tensor":
        return tmean(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Operator sugar; all arithmetic routes through the recorded primitives.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


def parameter(values) -> Tensor:
    return Tensor(values, requires_grad=True)


def constant(values) -> Tensor:
    return Tensor(values, requires_grad=False)


@dataclass
class _Entry:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of executed primitives for one backward pass.

    Use as a context manager around the forward computation; call
    ``backward`` on the scalar loss afterwards. A tape admits a single
    backward per recording; ``reset()`` clears it for reuse.
    """

    def __init__(self):
        self._entries: list[_Entry] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def __len__(self) -> int:
        return len(self._entries)

    def reset(self) -> None:
        self._entries.clear()
        self._consumed = False

    def backward(self, root: Tensor) -> None:
        """Populate ``.grad`` on every reachable requires_grad tensor.

        ``root`` must be a scalar (one element). Grads are overwritten, not
        accumulated, so they are exactly the adjoints of this single pass.
        """
        if self._consumed:
            raise AutodiffError("backward already ran on this tape; call reset() first")
        if not isinstance(root, Tensor) or root.values.size != 1:
            raise ArgumentError("backward root must be a scalar tensor")
        self._consumed = True

        grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.values)}
        holders: dict[int, Tensor] = {id(root): root}
        for entry in reversed(self._entries):
            gout = grads.get(id(entry.out))
            if gout is None:
                continue
            for tensor, gin in zip(entry.inputs, entry.backward(gout)):
                if gin is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + gin
                else:
                    grads[key] = np.array(gin, dtype=np.float64, copy=True)
                    holders[key] = tensor
        for key, tensor in holders.items():
            if tensor.requires_grad:
                tensor.grad = grads[key].reshape(tensor.values.shape)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _record(out: Tensor, inputs: tuple[Tensor, ...], backward) -> None:
    if _TAPE_STACK and out.requires_grad:
        _TAPE_STACK[-1]._entries.append(_Entry(out, inputs, backward))


def _needs_grad(*tensors: Tensor) -> bool:
    return any(t.requires_grad for t in tensors)


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Collapse a broadcast gradient back to a scalar operand's shape."""
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape)


def _binary(name, a, b, fwd, bwd_a, bwd_b, guard=None) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} differ and neither is scalar")
    if guard is not None:
        guard(a.values, b.values)
    av, bv = a.values, b.values
    out = Tensor(fwd(av, bv), requires_grad=_needs_grad(a, b))

    def backward(g):
        ga = _reduce_to(bwd_a(g, av, bv), a.shape) if a.requires_grad else None
        gb = _reduce_to(bwd_b(g, av, bv), b.shape) if b.requires_grad else None
        return ga, gb

    _record(out, (a, b), backward)
    return out


def _unary(name, x, fwd, bwd, guard=None) -> Tensor:
    x = _as_tensor(x)
    if guard is not None:
        guard(x.values)
    xv = x.values
    yv = fwd(xv)
    out = Tensor(yv, requires_grad=x.requires_grad)
    _record(out, (x,), lambda g: (bwd(g, xv, yv),))
    return out


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a, b) -> Tensor:
    return _binary("add", a, b, np.add, lambda g, av, bv: g, lambda g, av, bv: g)


def sub(a, b) -> Tensor:
    return _binary("sub", a, b, np.subtract, lambda g, av, bv: g, lambda g, av, bv: -g)


def mul(a, b) -> Tensor:
    return _binary("mul", a, b, np.multiply, lambda g, av, bv: g * bv, lambda g, av, bv: g * av)


def _div_guard(av, bv):
    if np.any(bv == 0.0):
        raise DomainError("div: division by zero")


def div(a, b) -> Tensor:
    return _binary(
        "div",
        a,
        b,
        np.divide,
        lambda g, av, bv: g / bv,
        lambda g, av, bv: -g * av / (bv * bv),
        guard=_div_guard,
    )


def neg(x) -> Tensor:
    return _unary("neg", x, np.negative, lambda g, xv, yv: -g)


def scale(x, c: float) -> Tensor:
    c = float(c)
    return _unary("scale", x, lambda v: v * c, lambda g, xv, yv: g * c)


def exp(x) -> Tensor:
    return _unary("exp", x, np.exp, lambda g, xv, yv: g * yv)


def _log_guard(xv):
    if np.any(xv <= 0.0):
        raise DomainError("log: input must be strictly positive")


def log(x) -> Tensor:
    return _unary("log", x, np.log, lambda g, xv, yv: g / xv, guard=_log_guard)


def tanh(x) -> Tensor:
    return _unary("tanh", x, np.tanh, lambda g, xv, yv: g * (1.0 - yv * yv))


def relu(x) -> Tensor:
    # Subgradient at exactly 0 is 0.
    return _unary("relu", x, lambda v: np.maximum(v, 0.0), lambda g, xv, yv: g * (xv > 0.0))


def _sigmoid_values(xv: np.ndarray) -> np.ndarray:
    out = np.empty_like(xv)
    pos = xv >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xv[pos]))
    ex = np.exp(xv[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x) -> Tensor:
    return _unary("sigmoid", x, _sigmoid_values, lambda g, xv, yv: g * yv * (1.0 - yv))


def softplus(x) -> Tensor:
    return _unary(
        "softplus",
        x,
        lambda v: np.logaddexp(0.0, v),
        lambda g, xv, yv: g * _sigmoid_values(xv),
    )


def powc(x, p: float) -> Tensor:
    """x ** p for a constant exponent; x must be positive unless p is a
    non-negative integer."""
    p = float(p)
    integral = p == int(p) and p >= 0

    def guard(xv):
        if not integral and np.any(xv <= 0.0):
            raise DomainError(f"powc: base must be positive for exponent {p}")

    return _unary(
        "powc",
        x,
        lambda v: np.power(v, p),
        lambda g, xv, yv: g * p * np.power(xv, p - 1.0),
        guard=guard,
    )


def clamp(x, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes unchanged where lo <= x <= hi."""
    lo, hi = float(lo), float(hi)
    if lo > hi:
        raise ArgumentError(f"clamp: lo {lo} > hi {hi}")
    return _unary(
        "clamp",
        x,
        lambda v: np.clip(v, lo, hi),
        lambda g, xv, yv: g * ((xv >= lo) & (xv <= hi)),
    )


# ---------------------------------------------------------------------------
# matrix / structural primitives


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ShapeError(f"matmul: expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree: {a.shape} x {b.shape}")
    av, bv = a.values, b.values
    out = Tensor(av @ bv, requires_grad=_needs_grad(a, b))

    def backward(g):
        ga = g @ bv.T if a.requires_grad else None
        gb = av.T @ g if b.requires_grad else None
        return ga, gb

    _record(out, (a, b), backward)
    return out


def transpose(x) -> Tensor:
    x = _as_tensor(x)
    if x.values.ndim != 2:
        raise ShapeError(f"transpose: expects 2-d input, got {x.shape}")
    out = Tensor(x.values.T.copy(), requires_grad=x.requires_grad)
    _record(out, (x,), lambda g: (g.T,))
    return out


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    old = x.values.shape
    out = Tensor(x.values.reshape(shape), requires_grad=x.requires_grad)
    _record(out, (x,), lambda g: (g.reshape(old),))
    return out


def concat(a, b, axis: int = 0) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.values.ndim != b.values.ndim:
        raise ShapeError(f"concat: rank mismatch {a.shape} vs {b.shape}")
    for d in range(a.values.ndim):
        if d != axis and a.shape[d] != b.shape[d]:
            raise ShapeError(f"concat: shapes {a.shape} and {b.shape} disagree off axis {axis}")
    split = a.shape[axis]
    out = Tensor(np.concatenate([a.values, b.values], axis=axis), requires_grad=_needs_grad(a, b))

    def backward(g):
        ga, gb = np.split(g, [split], axis=axis)
        return (ga if a.requires_grad else None, gb if b.requires_grad else None)

    _record(out, (a, b), backward)
    return out


def gather_rows(x, index) -> Tensor:
    """Select rows by integer index; the adjoint scatter-adds back."""
    x = _as_tensor(x)
    if x.values.ndim != 2:
        raise ShapeError(f"gather_rows: expects 2-d input, got {x.shape}")
    idx = np.asarray(index, dtype=np.intp)
    if idx.ndim != 1 or (idx.size and (idx.min() < 0 or idx.max() >= x.shape[0])):
        raise ArgumentError("gather_rows: index out of range")
    out = Tensor(x.values[idx], requires_grad=x.requires_grad)

    def backward(g):
        buf = np.zeros_like(x.values)
        np.add.at(buf, idx, g)
        return (buf,)

    _record(out, (x,), backward)
    return out


def sum_blocks_rows(x, block: int) -> Tensor:
    """Sum consecutive blocks of ``block`` rows: (n*block, m) -> (n, m)."""
    x = _as_tensor(x)
    if x.values.ndim != 2 or block <= 0 or x.shape[0] % block != 0:
        raise ShapeError(f"sum_blocks_rows: cannot split {x.shape} into row blocks of {block}")
    n = x.shape[0] // block
    out_vals = x.values.reshape(n, block, x.shape[1]).sum(axis=1)
    out = Tensor(out_vals, requires_grad=x.requires_grad)
    _record(out, (x,), lambda g: (np.repeat(g, block, axis=0),))
    return out


def _vector_arg(v, n: int, name: str) -> Tensor:
    v = _as_tensor(v)
    if v.values.ndim != 1 or v.shape[0] != n:
        raise ShapeError(f"{name}: expected vector of length {n}, got shape {v.shape}")
    return v


def scale_rows(x, v) -> Tensor:
    """Multiply row i of x by v[i]."""
    x = _as_tensor(x)
    if x.values.ndim != 2:
        raise ShapeError(f"scale_rows: expects 2-d input, got {x.shape}")
    v = _vector_arg(v, x.shape[0], "scale_rows")
    xv, vv = x.values, v.values
    out = Tensor(xv * vv[:, None], requires_grad=_needs_grad(x, v))

    def backward(g):
        gx = g * vv[:, None] if x.requires_grad else None
        gv = (g * xv).sum(axis=1) if v.requires_grad else None
        return gx, gv

    _record(out, (x, v), backward)
    return out


def scale_cols(x, v) -> Tensor:
    """Multiply column j of x by v[j]."""
    x = _as_tensor(x)
    if x.values.ndim != 2:
        raise ShapeError(f"scale_cols: expects 2-d input, got {x.shape}")
    v = _vector_arg(v, x.shape[1], "scale_cols")
    xv, vv = x.values, v.values
    out = Tensor(xv * vv[None, :], requires_grad=_needs_grad(x, v))

    def backward(g):
        gx = g * vv[None, :] if x.requires_grad else None
        gv = (g * xv).sum(axis=0) if v.requires_grad else None
        return gx, gv

    _record(out, (x, v), backward)
    return out


def add_rows(x, v) -> Tensor:
    """Add v[i] to every entry of row i."""
    x = _as_tensor(x)
    if x.values.ndim != 2:
        raise ShapeError(f"add_rows: expects 2-d input, got {x.shape}")
    v = _vector_arg(v, x.shape[0], "add_rows")
    out = Tensor(x.values + v.values[:, None], requires_grad=_needs_grad(x, v))

    def backward(g):
        return (g if x.requires_grad else None, g.sum(axis=1) if v.requires_grad else None)

    _record(out, (x, v), backward)
    return out


def add_rowvec(x, b) -> Tensor:
    """Add the length-m vector b to every row of x (bias add)."""
    x = _as_tensor(x)
    if x.values.ndim != 2:
        raise ShapeError(f"add_rowvec: expects 2-d input, got {x.shape}")
    b = _vector_arg(b, x.shape[1], "add_rowvec")
    out = Tensor(x.values + b.values[None, :], requires_grad=_needs_grad(x, b))

    def backward(g):
        return (g if x.requires_grad else None, g.sum(axis=0) if b.requires_grad else None)

    _record(out, (x, b), backward)
    return out


# ---------------------------------------------------------------------------
# reductions


def tsum(x) -> Tensor:
    x = _as_tensor(x)
    shape = x.values.shape
    out = Tensor(np.sum(x.values), requires_grad=x.requires_grad)
    _record(out, (x,), lambda g: (np.full(shape, float(g)),))
    return out


def tmean(x) -> Tensor:
    x = _as_tensor(x)
    shape = x.values.shape
    n = x.size
    out = Tensor(np.mean(x.values), requires_grad=x.requires_grad)
    _record(out, (x,), lambda g: (np.full(shape, float(g) / n),))
    return out


def row_sum(x) -> Tensor:
    x = _as_tensor(x)
    if x.values.ndim != 2:
        raise ShapeError(f"row_sum: expects 2-d input, got {x.shape}")
    m = x.shape[1]
    out = Tensor(x.values.sum(axis=1), requires_grad=x.requires_grad)
    _record(out, (x,), lambda g: (np.broadcast_to(g[:, None], (g.shape[0], m)).copy(),))
    return out


def l1_norm_rows(x) -> Tensor:
    """Per-row sum of absolute values: (n, m) -> (n,)."""
    x = _as_tensor(x)
    if x.values.ndim != 2:
        raise ShapeError(f"l1_norm_rows: expects 2-d input, got {x.shape}")
    xv = x.values
    out = Tensor(np.abs(xv).sum(axis=1), requires_grad=x.requires_grad)
    _record(out, (x,), lambda g: (g[:, None] * np.sign(xv),))
    return out


# ---------------------------------------------------------------------------
# softmax


def softmax_rows(x) -> Tensor:
    """Row-wise softmax, stabilized by row-max subtraction."""
    x = _as_tensor(x)
    if x.values.ndim != 2:
        raise ShapeError(f"softmax_rows: expects 2-d input, got {x.shape}")
    if not np.all(np.isfinite(x.values)):
        raise NumericError("softmax_rows: input contains NaN or Inf")
    shifted = x.values - x.values.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    yv = ex / ex.sum(axis=1, keepdims=True)
    out = Tensor(yv, requires_grad=x.requires_grad)

    def backward(g):
        dot = (g * yv).sum(axis=1, keepdims=True)
        return (yv * (g - dot),)

    _record(out, (x,), backward)
    return out


# ---------------------------------------------------------------------------
# sorting and permutation routing


def argsort_descending(x) -> np.ndarray:
    """Indices putting a vector in non-increasing order; ties keep original
    order. Not differentiable; use permute_apply to route values."""
    v = x.values if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"argsort_descending: expects 1-d input, got {v.shape}")
    return np.argsort(-v, kind="stable")


def argsort_rows_descending(x) -> np.ndarray:
    """Row-wise stable descending argsort of a matrix."""
    v = x.values if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if v.ndim != 2:
        raise ShapeError(f"argsort_rows_descending: expects 2-d input, got {v.shape}")
    return np.argsort(-v, axis=1, kind="stable")


def _check_permutation(perm: np.ndarray, n: int) -> None:
    if perm.shape[-1] != n or not np.array_equal(np.sort(perm, axis=-1), np.broadcast_to(np.arange(n), perm.shape)):
        raise ArgumentError("invalid permutation: not a bijection on [0, n)")


def permute_apply(x, perm) -> Tensor:
    """y[i] = x[perm[i]]; the adjoint routes gradients through the inverse."""
    x = _as_tensor(x)
    if x.values.ndim != 1:
        raise ShapeError(f"permute_apply: expects 1-d input, got {x.shape}")
    perm = np.asarray(perm, dtype=np.intp)
    if perm.ndim != 1:
        raise ArgumentError("permute_apply: permutation must be 1-d")
    _check_permutation(perm, x.shape[0])
    out = Tensor(x.values[perm], requires_grad=x.requires_grad)

    def backward(g):
        buf = np.empty_like(g)
        buf[perm] = g
        return (buf,)

    _record(out, (x,), backward)
    return out


def apply_perm_rows(x, perms) -> Tensor:
    """Row-wise permutation: y[i, j] = x[i, perms[i, j]]."""
    x = _as_tensor(x)
    if x.values.ndim != 2:
        raise ShapeError(f"apply_perm_rows: expects 2-d input, got {x.shape}")
    perms = np.asarray(perms, dtype=np.intp)
    if perms.shape != x.shape:
        raise ArgumentError(f"apply_perm_rows: permutation shape {perms.shape} != {x.shape}")
    _check_permutation(perms, x.shape[1])
    out = Tensor(np.take_along_axis(x.values, perms, axis=1), requires_grad=x.requires_grad)

    def backward(g):
        buf = np.empty_like(g)
        np.put_along_axis(buf, perms, g, axis=1)
        return (buf,)

    _record(out, (x,), backward)
    return out


def invert_perms(perms: np.ndarray) -> np.ndarray:
    """Inverse of one permutation per row (or of a single 1-d permutation)."""
    perms = np.asarray(perms, dtype=np.intp)
    inv = np.empty_like(perms)
    if perms.ndim == 1:
        inv[perms] = np.arange(perms.shape[0])
    else:
        np.put_along_axis(inv, perms, np.broadcast_to(np.arange(perms.shape[1]), perms.shape), axis=1)
    return inv


# ---------------------------------------------------------------------------
# finite-difference gradient verification


@dataclass
class FdFailure:
    param: str
    index: int
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class FdReport:
    max_rel_err: float
    per_param: dict[str, float]
    failures: list[FdFailure] = field(default_factory=list)
    tolerance: float = 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def finite_difference_check(
    f: Callable[[], Tensor],
    params: Sequence[tuple[str, Tensor]],
    step: float = 1e-5,
    tolerance: float = 1e-6,
    rng=None,
    denom_floor: float = 1e-2,
) -> FdReport:
    """Compare analytic gradients of ``f`` against central finite differences.

    ``f`` must rebuild the scalar loss from the live ``params`` tensors on
    every call. Relative error per coordinate is
    |a - n| / max(|a|, |n|, denom_floor); the floor turns coordinates with
    near-zero gradients into an absolute check, which is all central
    differences can certify there. When ``rng`` (an RngState) is given, its
    noise is frozen for the whole check so every evaluation sees identical
    samples.
    """

    def run(handle) -> FdReport:
        with Tape() as tape:
            loss = f()
        tape.backward(loss)
        analytic = [
            (name, np.zeros_like(p.values) if p.grad is None else p.grad.copy())
            for name, p in params
        ]

        max_rel = 0.0
        per_param: dict[str, float] = {}
        failures: list[FdFailure] = []
        for (name, p), (_, a) in zip(params, analytic):
            flat = p.values.reshape(-1)
            aflat = a.reshape(-1)
            worst = 0.0
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                if handle is not None:
                    handle.rewind()
                fp = float(f().values)
                flat[i] = orig - step
                if handle is not None:
                    handle.rewind()
                fm = float(f().values)
                flat[i] = orig
                numeric = (fp - fm) / (2.0 * step)
                denom = max(abs(aflat[i]), abs(numeric), denom_floor)
                rel = abs(aflat[i] - numeric) / denom
                if rel >= tolerance:
                    failures.append(FdFailure(name, i, float(aflat[i]), numeric, rel))
                worst = max(worst, rel)
            per_param[name] = worst
            max_rel = max(max_rel, worst)
        return FdReport(max_rel_err=max_rel, per_param=per_param, failures=failures, tolerance=tolerance)

    if rng is not None:
        with rng.freeze() as handle:
            return run(handle)
    return run(None)
