"""Dense float64 tensors with reverse-mode automatic differentiation.

Every loss and penalty in the toolkit is built from the primitives here, so
one gradient path covers them all.  The engine is deliberately small: numpy
holds the values, each operation records a closure that maps the output
gradient to input-gradient contributions, and ``backward`` replays them in
reverse topological order.  No higher-order derivatives, no in-place graph
mutation.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import ContractViolationError
from .rng import stream

Array = np.ndarray


def _as_array(value) -> Array:
    return np.asarray(value, dtype=np.float64)


class Tensor:
    """A node in the differentiation graph.

    Leaves are created directly (optionally with ``requires_grad``); interior
    nodes are produced by the operations below.  ``grad`` is populated by
    ``backward`` for every node that requires a gradient.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.grad: Array | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[Array], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar; all routes through the module-level primitives
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)

    def backward(self) -> None:
        backward(self)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def constant(value) -> Tensor:
    return Tensor(value, requires_grad=False)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _make(data: Array, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def _accumulate(node: Tensor, contribution: Array) -> None:
    if not node.requires_grad:
        return
    if node.grad is None:
        node.grad = np.array(contribution, dtype=np.float64)
    else:
        node.grad = node.grad + contribution


# ---------------------------------------------------------------------------
# elementwise arithmetic (numpy broadcasting rules apply)

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def bwd(g: Array) -> None:
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def bwd(g: Array) -> None:
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def bwd(g: Array) -> None:
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data / b.data

    def bwd(g: Array) -> None:
        _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(data, (a, b), bwd)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g: Array) -> None:
        _accumulate(a, -g)

    return _make(-a.data, (a,), bwd)


def power(a, exponent: float) -> Tensor:
    """Elementwise ``a ** exponent`` for a fixed scalar exponent >= 1."""
    a = as_tensor(a)
    p = float(exponent)
    data = np.power(a.data, p)

    def bwd(g: Array) -> None:
        _accumulate(a, g * p * np.power(a.data, p - 1.0))

    return _make(data, (a,), bwd)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes through at the boundaries."""
    a = as_tensor(a)
    data = np.clip(a.data, lo, hi)

    def bwd(g: Array) -> None:
        _accumulate(a, g * ((a.data >= lo) & (a.data <= hi)))

    return _make(data, (a,), bwd)


# ---------------------------------------------------------------------------
# nonlinearities

def relu(a) -> Tensor:
    a = as_tensor(a)
    data = np.maximum(a.data, 0.0)

    def bwd(g: Array) -> None:
        _accumulate(a, g * (a.data > 0.0))

    return _make(data, (a,), bwd)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    data = _sigmoid(a.data)

    def bwd(g: Array) -> None:
        _accumulate(a, g * data * (1.0 - data))

    return _make(data, (a,), bwd)


def _sigmoid(x: Array) -> Array:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softplus(a) -> Tensor:
    """log(1 + exp(a)), computed stably; derivative is sigmoid(a)."""
    a = as_tensor(a)
    data = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))

    def bwd(g: Array) -> None:
        _accumulate(a, g * _sigmoid(a.data))

    return _make(data, (a,), bwd)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    data = np.sqrt(a.data)

    def bwd(g: Array) -> None:
        _accumulate(a, g * 0.5 / data)

    return _make(data, (a,), bwd)


# ---------------------------------------------------------------------------
# reductions and linear maps

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g: Array) -> None:
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape))
        else:
            g_exp = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(g_exp, a.data.shape))

    return _make(data, (a,), bwd)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ContractViolationError(
            f"matmul expects 2-d operands, got {a.data.shape} @ {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise ContractViolationError(
            f"matmul inner dimensions differ: {a.data.shape} @ {b.data.shape}"
        )
    data = a.data @ b.data

    def bwd(g: Array) -> None:
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _make(data, (a, b), bwd)


# ---------------------------------------------------------------------------
# indexed operations for graph message passing

def gather_rows(a, index) -> Tensor:
    """Rows ``a[index]``; backward scatter-adds into the source rows."""
    a = as_tensor(a)
    idx = np.asarray(index, dtype=np.int64)
    data = a.data[idx]

    def bwd(g: Array) -> None:
        if a.requires_grad:
            out = np.zeros_like(a.data)
            np.add.at(out, idx, g)
            _accumulate(a, out)

    return _make(data, (a,), bwd)


def scatter_sum(a, index, size: int) -> Tensor:
    """out[j] = sum of rows i of ``a`` with index[i] == j."""
    a = as_tensor(a)
    idx = np.asarray(index, dtype=np.int64)
    data = np.zeros((size,) + a.data.shape[1:], dtype=np.float64)
    np.add.at(data, idx, a.data)

    def bwd(g: Array) -> None:
        _accumulate(a, g[idx])

    return _make(data, (a,), bwd)


def segment_mean(a, segment, size: int) -> Tensor:
    """Mean of rows grouped by segment id; every segment must be non-empty."""
    a = as_tensor(a)
    seg = np.asarray(segment, dtype=np.int64)
    counts = np.bincount(seg, minlength=size).astype(np.float64)
    if np.any(counts == 0):
        raise ContractViolationError("segment_mean: empty segment")
    sums = scatter_sum(a, seg, size)
    return mul(sums, (1.0 / counts)[:, None])


def slice_tail(a, k: int) -> Tensor:
    """Last ``k`` entries of a 1-d tensor."""
    a = as_tensor(a)
    if a.data.ndim != 1:
        raise ContractViolationError("slice_tail expects a 1-d tensor")
    if not 1 <= k <= a.data.shape[0]:
        raise ContractViolationError(f"slice_tail: k={k} outside [1, {a.data.shape[0]}]")
    data = a.data[-k:]

    def bwd(g: Array) -> None:
        out = np.zeros_like(a.data)
        out[-k:] = g
        _accumulate(a, out)

    return _make(data, (a,), bwd)


# ---------------------------------------------------------------------------
# dropout with counter-based masks

def dropout(a, rate: float, key: tuple, mode: str) -> Tensor:
    """Inverted dropout; the mask is a pure function of ``key``.

    ``key`` identifies the draw site, conventionally (seed, epoch, batch,
    op_id); identical keys give identical masks, which keeps a whole run
    bit-reproducible.  Identity in eval mode or at rate 0.
    """
    a = as_tensor(a)
    if mode not in ("train", "eval"):
        raise ContractViolationError(f"dropout mode must be train|eval, got {mode!r}")
    if not 0.0 <= rate < 1.0:
        raise ContractViolationError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return a
    u = stream("dropout", *key).random(a.data.shape)
    mask = (u >= rate) / (1.0 - rate)
    data = a.data * mask

    def bwd(g: Array) -> None:
        _accumulate(a, g * mask)

    return _make(data, (a,), bwd)


# ---------------------------------------------------------------------------
# spectral values (backward through singular values only)

def singular_values(a) -> Tensor:
    """Descending singular values of a 2-d tensor.

    The backward rule is d(sigma_i)/dA = u_i v_i^T.  For a repeated or zero
    smallest value this is the subgradient given by the returned pair, which
    is deterministic for a fixed decomposition.
    """
    from .linalg import svd  # local import; linalg has no tensor dependency

    a = as_tensor(a)
    result = svd(a.data)
    u, s, v = result.u, result.s, result.v

    def bwd(g: Array) -> None:
        contrib = np.einsum("k,ik,jk->ij", g, u, v)
        _accumulate(a, contrib)

    return _make(s, (a,), bwd)


# ---------------------------------------------------------------------------
# losses

def _sanitize_targets(targets: Array, mask: Array) -> tuple[Array, Array, float]:
    mask_bool = np.asarray(mask, dtype=bool)
    count = float(mask_bool.sum())
    if count == 0:
        raise ContractViolationError("loss over an empty observation mask")
    safe = np.where(mask_bool, np.asarray(targets, dtype=np.float64), 0.0)
    return safe, mask_bool.astype(np.float64), count


def bce_with_logits(logits, targets, mask) -> Tensor:
    """Mean binary cross-entropy over observed cells, from raw logits.

    Uses softplus(z) - z*y per cell; unobserved cells contribute nothing to
    the value or the gradient.
    """
    logits = as_tensor(logits)
    safe, mask_f, count = _sanitize_targets(targets, mask)
    per_cell = sub(softplus(logits), mul(logits, safe))
    return mul(tsum(mul(per_cell, mask_f)), 1.0 / count)


def mse_loss(preds, targets, mask) -> Tensor:
    """Mean squared error over observed cells."""
    preds = as_tensor(preds)
    safe, mask_f, count = _sanitize_targets(targets, mask)
    diff = mul(sub(preds, safe), mask_f)
    return mul(tsum(mul(diff, diff)), 1.0 / count)


def cosine_rows(a, b) -> Tensor:
    """Row-wise cosine similarity of two equal-shape 2-d tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape or a.data.ndim != 2:
        raise ContractViolationError(
            f"cosine_rows expects matching 2-d shapes, got {a.data.shape} vs {b.data.shape}"
        )
    dots = tsum(mul(a, b), axis=1)
    norm_a = sqrt(tsum(mul(a, a), axis=1))
    norm_b = sqrt(tsum(mul(b, b), axis=1))
    return div(dots, mul(norm_a, norm_b))


# ---------------------------------------------------------------------------
# backward pass and gradient extraction

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` for every tensor that the scalar ``loss`` depends on."""
    if loss.data.size != 1:
        raise ContractViolationError(
            f"backward requires a scalar loss, got shape {loss.data.shape}"
        )
    order = _topo_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)


def grad(loss: Tensor, params: Mapping[str, Tensor]) -> dict[str, Tensor]:
    """Gradients of a scalar loss with respect to named leaf tensors.

    Leaves that do not lie on a path to the loss receive zero gradients.
    """
    for p in params.values():
        p.grad = None
    backward(loss)
    out: dict[str, Tensor] = {}
    for name, p in params.items():
        if p.grad is None:
            out[name] = Tensor(np.zeros_like(p.data))
        else:
            out[name] = Tensor(p.grad)
    return out


def finite_diff_grad(f: Callable[[Array], float], x: Array, h: float = 1e-5) -> Array:
    """Central-difference gradient estimate of a scalar function of a vector."""
    x = _as_array(x).copy()
    out = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = float(f(x))
        flat[i] = orig - h
        f_minus = float(f(x))
        flat[i] = orig
        out.reshape(-1)[i] = (f_plus - f_minus) / (2.0 * h)
    return out
