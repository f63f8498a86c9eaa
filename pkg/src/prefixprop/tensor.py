"""Dense 2-D tensors with reverse-mode autodiff.

Everything above this module is pure math over :class:`Tensor`.  The design
is a conventional taped graph: every differentiable op returns a new tensor
holding references to its parents and a closure that pushes the output
gradient back to them.  ``Tensor.backward()`` on a scalar runs the closures
in reverse topological order.

Conventions:

* data is float64 by default (verification paths require it); float32 is an
  opt-in for training speed and is preserved through every op;
* all tensors are 2-D: scalars are (1, 1), row vectors (1, n).  Inputs of
  lower rank are promoted on construction;
* tensors are immutable values once constructed.  The only sanctioned
  mutation is an optimizer updating a leaf's ``data`` between steps, after
  the graph referencing it has been dropped;
* leaves with ``requires_grad=False`` never accumulate gradient (their
  ``grad`` stays ``None``, which reads as identically zero).
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from . import kernels
from .errors import LabelError, ShapeError, VocabError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (eval / benchmark paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_2d(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"tensors are at most 2-D, got shape {arr.shape}")
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_2d(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-mode pass from this scalar through the recorded graph."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward()

    # operator sugar -----------------------------------------------------
    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(other) if isinstance(other, Tensor) else -other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def sum(self):
        return sum_all(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward=None) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._parents = ()
    out._backward = None
    out.requires_grad = False
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad += g


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; differentiable w.r.t. both arguments."""
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out = _result(a.data @ b.data, (a, b))

    def backward():
        g = out.grad
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    out._backward = backward if out.requires_grad else None
    return out


def add(a: Tensor, b) -> Tensor:
    """Elementwise sum; ``b`` may be a matching tensor, a (1, n) row
    broadcast over ``a``'s rows, or a python scalar."""
    if not isinstance(b, Tensor):
        return _scalar_shift(a, float(b))
    broadcast = b.shape != a.shape
    if broadcast and not (b.shape == (1, a.shape[1])):
        raise ShapeError(f"add shapes incompatible: {a.shape} + {b.shape}")
    out = _result(a.data + b.data, (a, b))

    def backward():
        g = out.grad
        _accumulate(a, g)
        _accumulate(b, g.sum(axis=0, keepdims=True) if broadcast else g)

    out._backward = backward if out.requires_grad else None
    return out


def _scalar_shift(a: Tensor, c: float) -> Tensor:
    out = _result(a.data + np.asarray(c, dtype=a.dtype), (a,))

    def backward():
        _accumulate(a, out.grad)

    out._backward = backward if out.requires_grad else None
    return out


def neg(a: Tensor) -> Tensor:
    out = _result(-a.data, (a,))

    def backward():
        _accumulate(a, -out.grad)

    out._backward = backward if out.requires_grad else None
    return out


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product with a matching tensor or a python scalar."""
    if not isinstance(b, Tensor):
        c = float(b)
        out = _result(a.data * np.asarray(c, dtype=a.dtype), (a,))

        def backward_scalar():
            _accumulate(a, out.grad * c)

        out._backward = backward_scalar if out.requires_grad else None
        return out
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes differ: {a.shape} vs {b.shape}")
    out = _result(a.data * b.data, (a, b))

    def backward():
        g = out.grad
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    out._backward = backward if out.requires_grad else None
    return out


def transpose(a: Tensor) -> Tensor:
    out = _result(a.data.T, (a,))

    def backward():
        _accumulate(a, out.grad.T)

    out._backward = backward if out.requires_grad else None
    return out


def sum_all(a: Tensor) -> Tensor:
    """Sum of all entries as a (1, 1) scalar tensor."""
    out = _result(a.data.sum(dtype=a.dtype).reshape(1, 1), (a,))

    def backward():
        _accumulate(a, np.full_like(a.data, out.grad[0, 0]))

    out._backward = backward if out.requires_grad else None
    return out


def concat_rows(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_rows needs at least one part")
    widths = {p.shape[1] for p in parts}
    if len(widths) != 1:
        raise ShapeError(f"concat_rows column counts differ: {[p.shape for p in parts]}")
    out = _result(np.concatenate([p.data for p in parts], axis=0), tuple(parts))

    def backward():
        g = out.grad
        row = 0
        for p in parts:
            n = p.shape[0]
            _accumulate(p, g[row : row + n])
            row += n

    out._backward = backward if out.requires_grad else None
    return out


def concat_cols(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_cols needs at least one part")
    heights = {p.shape[0] for p in parts}
    if len(heights) != 1:
        raise ShapeError(f"concat_cols row counts differ: {[p.shape for p in parts]}")
    out = _result(np.concatenate([p.data for p in parts], axis=1), tuple(parts))

    def backward():
        g = out.grad
        col = 0
        for p in parts:
            n = p.shape[1]
            _accumulate(p, g[:, col : col + n])
            col += n

    out._backward = backward if out.requires_grad else None
    return out


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    out = _result(a.data[start:stop], (a,))

    def backward():
        g = np.zeros_like(a.data)
        g[start:stop] = out.grad
        _accumulate(a, g)

    out._backward = backward if out.requires_grad else None
    return out


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    out = _result(a.data[:, start:stop], (a,))

    def backward():
        g = np.zeros_like(a.data)
        g[:, start:stop] = out.grad
        _accumulate(a, g)

    out._backward = backward if out.requires_grad else None
    return out


# ---------------------------------------------------------------------------
# fused kernels (forward/backward pairs served by the kernels backend)
# ---------------------------------------------------------------------------


def softmax_rows(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row-stochastic softmax; masked entries receive exactly zero.

    ``mask`` is a boolean allow-matrix of the same shape.  Raises
    :class:`DegenerateRowError` when a row has no unmasked entry.
    """
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != a.shape:
            raise ShapeError(f"mask shape {mask.shape} != scores shape {a.shape}")
    probs = kernels.softmax_forward(a.data, mask)
    out = _result(probs, (a,))

    def backward():
        _accumulate(a, kernels.softmax_backward(probs, out.grad))

    out._backward = backward if out.requires_grad else None
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row zero-mean/unit-variance standardization, then affine."""
    if eps <= 0:
        raise ShapeError(f"layer_norm eps must be positive, got {eps}")
    d = x.shape[1]
    if gamma.shape != (1, d) or beta.shape != (1, d):
        raise ShapeError(
            f"layer_norm affine shapes must be (1, {d}), got {gamma.shape} and {beta.shape}"
        )
    y, mean, rstd = kernels.layer_norm_forward(x.data, gamma.data.ravel(), beta.data.ravel(), eps)
    out = _result(y, (x, gamma, beta))

    def backward():
        dx, dgamma, dbeta = kernels.layer_norm_backward(
            x.data, gamma.data.ravel(), mean, rstd, out.grad
        )
        _accumulate(x, dx)
        _accumulate(gamma, dgamma.reshape(1, -1))
        _accumulate(beta, dbeta.reshape(1, -1))

    out._backward = backward if out.requires_grad else None
    return out


def gelu(a: Tensor) -> Tensor:
    out = _result(kernels.gelu_forward(a.data), (a,))

    def backward():
        _accumulate(a, kernels.gelu_backward(a.data, out.grad))

    out._backward = backward if out.requires_grad else None
    return out


# ---------------------------------------------------------------------------
# model-facing composite primitives
# ---------------------------------------------------------------------------


def dropout(a: Tensor, rate: float, rng: np.random.Generator, train: bool) -> Tensor:
    """Inverted dropout; identity when ``train`` is false or rate is 0."""
    if not train or rate == 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise ShapeError(f"dropout rate must be in [0, 1), got {rate}")
    keep = (rng.random(a.shape) >= rate).astype(a.dtype.type)
    keep /= np.asarray(1.0 - rate, dtype=a.dtype)
    scale = Tensor(keep)
    return mul(a, scale)


def embedding_rows(token_ids, cls_vec: Tensor, table: Tensor, cls_id: int = 0) -> Tensor:
    """Gather embedding rows for a token sequence.

    Token ``cls_id`` reads from the dedicated ``cls_vec`` parameter (kept
    separate from the table so it can stay trainable while the table is
    frozen); every other id reads its row of ``table``.
    """
    ids = np.asarray(token_ids, dtype=np.int64)
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        bad = int(ids[(ids < 0) | (ids >= vocab)][0])
        raise VocabError(f"token id {bad} outside vocabulary of size {vocab}")
    is_cls = ids == cls_id
    data = table.data[ids].copy()
    data[is_cls] = cls_vec.data[0]
    out = _result(data, (cls_vec, table))

    def backward():
        g = out.grad
        if cls_vec.requires_grad and is_cls.any():
            if cls_vec.grad is None:
                cls_vec.grad = np.zeros_like(cls_vec.data)
            cls_vec.grad[0] += g[is_cls].sum(axis=0)
        if table.requires_grad and (~is_cls).any():
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, ids[~is_cls], g[~is_cls])

    out._backward = backward if out.requires_grad else None
    return out


def cross_entropy_rows(logits: Tensor, labels) -> Tensor:
    """Per-row -log softmax(logits)[label], shape (B, 1).

    Stable via log-sum-exp; backward is softmax minus one-hot.
    """
    labels = np.asarray(labels, dtype=np.int64).ravel()
    n, k = logits.shape
    if labels.shape[0] != n:
        raise ShapeError(f"{labels.shape[0]} labels for {n} logit rows")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        bad = int(labels[(labels < 0) | (labels >= k)][0])
        raise LabelError(f"label {bad} outside [0, {k})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    losses = lse - shifted[np.arange(n), labels][:, None]
    out = _result(losses, (logits,))

    def backward():
        p = np.exp(shifted - lse)
        p[np.arange(n), labels] -= 1.0
        _accumulate(logits, out.grad * p)

    out._backward = backward if out.requires_grad else None
    return out
