"""Attention variants over a sliding-window/global-token mask.

Four computations share one multi-head core:

* ``standard_attention``: softmax(Q K^T / sqrt(d_h)) V per head, heads
  concatenated and projected.
* ``prefix_tuning_attention``: trained key/value rows are prepended per
  layer; queries come only from the input, so the output keeps the input's
  row count.
* ``prefix_propagation_attention``: trained prefix rows are part of the
  hidden sequence itself (concatenated once at the first layer, summed onto
  the first rows at deeper layers), so prefixes contribute queries as well
  as keys/values and the output has prefix rows of its own.
* ``kernel_decomposed_attention``: the propagation attention rewritten as
  two kernelized modules, one attending the sequence and one the prefix
  rows.  With the ``"exact"`` weighting the per-query split factor
  lambda reconstructs full softmax attention; a numeric ``alpha``
  rescales the prefix module's kernel scores before the row normalization
  is recomputed over both modules.

Prefix rows/columns are always globally attended.  Masks are dense boolean
allow-matrices; at this scale correctness and a shared execution path
across variants matter more than sparse storage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import ConfigError, EmptyKeysError, ShapeError
from .tensor import Tensor, _accumulate, _result, add, concat_rows, slice_rows


@dataclass(frozen=True)
class AttentionConfig:
    """Head geometry plus the sparse-mask parameters.

    ``window`` is the one-sided sliding-window radius over sequence
    positions, or ``"full"`` for dense attention.  ``global_positions``
    are sequence indices (0 = the classification token) attending and
    attended everywhere.  Prefix positions are implicitly global.
    """

    d_model: int
    n_heads: int
    prefix_len: int = 0
    window: int | str = "full"
    global_positions: frozenset[int] = frozenset()

    def __post_init__(self):
        if self.d_model <= 0 or self.n_heads <= 0:
            raise ConfigError(f"d_model/n_heads must be positive, got {self.d_model}/{self.n_heads}")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.prefix_len < 0:
            raise ConfigError(f"prefix_len must be nonnegative, got {self.prefix_len}")
        if self.window != "full" and (not isinstance(self.window, int) or self.window < 1):
            raise ConfigError(f'window must be a positive int or "full", got {self.window!r}')
        object.__setattr__(self, "global_positions", frozenset(self.global_positions))

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def with_prefix_len(self, j: int) -> "AttentionConfig":
        return replace(self, prefix_len=j)


@dataclass
class LayerWeights:
    """One encoder layer: attention projections, FFN, and layer norms.

    The d x d projections are read per head as contiguous d x d_head
    column slices, mirroring how hidden states are split across heads.
    """

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    w_ff1: Tensor
    b_ff1: Tensor
    w_ff2: Tensor
    b_ff2: Tensor
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor

    def named(self):
        for name in (
            "w_q", "w_k", "w_v", "w_o",
            "w_ff1", "b_ff1", "w_ff2", "b_ff2",
            "ln1_gamma", "ln1_beta", "ln2_gamma", "ln2_beta",
        ):
            yield name, getattr(self, name)


@dataclass
class PrefixBank:
    """Per-layer trainable prefix parameters.

    ``propagation`` trains a single (j, d) matrix per layer; it supplies
    queries, keys, and values at once.  ``prefix_tuning`` trains separate
    key and value matrices per layer and therefore twice the parameters.
    """

    mode: str  # "propagation" | "prefix_tuning"
    p: list[Tensor] = field(default_factory=list)
    p_k: list[Tensor] = field(default_factory=list)
    p_v: list[Tensor] = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in ("propagation", "prefix_tuning"):
            raise ConfigError(f"unknown prefix bank mode {self.mode!r}")

    @property
    def n_layers(self) -> int:
        return len(self.p) if self.mode == "propagation" else len(self.p_k)

    @property
    def prefix_len(self) -> int:
        first = self.p[0] if self.mode == "propagation" else self.p_k[0]
        return first.shape[0]

    def tensors(self):
        if self.mode == "propagation":
            for l, t in enumerate(self.p):
                yield f"bank.{l}.p", t
        else:
            for l, (tk, tv) in enumerate(zip(self.p_k, self.p_v)):
                yield f"bank.{l}.p_k", tk
                yield f"bank.{l}.p_v", tv

    def trainable_count(self) -> int:
        return sum(t.data.size for _, t in self.tensors())


@dataclass
class AttentionMask:
    """Boolean allow-matrix over composed positions (prefix rows first)."""

    allow: np.ndarray
    _tiled: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def shape(self):
        return self.allow.shape

    def tiled(self, n_heads: int) -> np.ndarray:
        """The allow-matrix stacked per head, cached on the instance."""
        t = self._tiled.get(n_heads)
        if t is None:
            t = np.ascontiguousarray(np.tile(self.allow, (n_heads, 1)))
            self._tiled[n_heads] = t
        return t


@dataclass
class KernelWeighting:
    """Per-head, per-query prefix mass split lambda, plus the scale alpha.

    ``lam[h, i]`` is the fraction of query row i's softmax mass that falls
    on prefix keys under head h; it is the exact weighting that makes the
    two-module decomposition reproduce full attention.
    """

    lam: np.ndarray  # (n_heads, n_queries)
    alpha: float | str


def build_mask(cfg: AttentionConfig, seq_len: int) -> AttentionMask:
    """Allow-matrix for ``prefix_len`` prefix rows plus ``seq_len`` positions.

    A pair is allowed iff the positions are within the sliding window of
    each other, either is a configured global position, or either is a
    prefix row.  Every row keeps at least its diagonal, so no query is
    fully masked.
    """
    if seq_len < 1:
        raise ConfigError(f"seq_len must be >= 1, got {seq_len}")
    for g in cfg.global_positions:
        if not 0 <= g < seq_len:
            raise IndexError(f"global position {g} out of range for seq_len {seq_len}")
    j = cfg.prefix_len
    n = j + seq_len
    if cfg.window == "full":
        return AttentionMask(np.ones((n, n), dtype=bool))
    allow = np.zeros((n, n), dtype=bool)
    pos = np.arange(seq_len)
    allow[j:, j:] = np.abs(pos[:, None] - pos[None, :]) <= cfg.window
    for g in cfg.global_positions:
        allow[j + g, :] = True
        allow[:, j + g] = True
    allow[:j, :] = True
    allow[:, :j] = True
    return AttentionMask(allow)


# ---------------------------------------------------------------------------
# shared multi-head core
# ---------------------------------------------------------------------------


def _multi_head(
    cfg: AttentionConfig,
    w: LayerWeights,
    q_rows: Tensor,
    parts,
    mask: AttentionMask | None,
    shift: np.ndarray | None = None,
):
    """All heads at once over key/value ``parts``, as one tape node.

    Each part is ("proj", k_src, v_src) for rows projected through
    W_k/W_v, or ("raw", keys, values) for trained rows used directly as
    per-head column slices.  ``shift`` is an optional constant added to
    the score matrix before the masked softmax (the alpha rescaling).
    Empty parts are dropped so a zero-length prefix leaves the exact
    execution path of standard attention.

    Heads are d x d_head column slices of the projections; the head loop
    runs inside einsum over a (heads, queries, keys) score block, and the
    whole computation records a single graph node with a fused backward.
    """
    parts = [p for p in parts if p[1].shape[0] > 0]
    if not parts:
        raise ShapeError("attention needs at least one key/value row")
    n_heads, dh, d = cfg.n_heads, cfg.d_head, cfg.d_model
    if q_rows.shape[1] != d:
        raise ShapeError(f"query rows have width {q_rows.shape[1]}, expected d_model {d}")
    n_q = q_rows.shape[0]
    n_k = sum(p[1].shape[0] for p in parts)
    if mask is not None and mask.allow.shape != (n_q, n_k):
        raise ShapeError(f"mask shape {mask.allow.shape} does not match scores shape {(n_q, n_k)}")
    scale = 1.0 / math.sqrt(dh)

    xq = q_rows.data
    q_flat = xq @ w.w_q.data
    k_blocks, v_blocks = [], []
    for kind, k_src, v_src in parts:
        if kind == "proj":
            k_blocks.append(k_src.data @ w.w_k.data)
            v_blocks.append(v_src.data @ w.w_v.data)
        else:
            k_blocks.append(k_src.data)
            v_blocks.append(v_src.data)
    k_flat = k_blocks[0] if len(k_blocks) == 1 else np.concatenate(k_blocks, axis=0)
    v_flat = v_blocks[0] if len(v_blocks) == 1 else np.concatenate(v_blocks, axis=0)

    # (rows, d) -> (heads, rows, d_head) stacks for batched matmul
    qh = q_flat.reshape(n_q, n_heads, dh).transpose(1, 0, 2)
    kh = k_flat.reshape(n_k, n_heads, dh).transpose(1, 0, 2)
    vh = v_flat.reshape(n_k, n_heads, dh).transpose(1, 0, 2)
    scores = (qh @ kh.transpose(0, 2, 1)) * scale
    if shift is not None:
        scores += shift
    probs = kernels.softmax_forward(
        scores.reshape(n_heads * n_q, n_k), mask.tiled(n_heads) if mask is not None else None
    )
    ph = probs.reshape(n_heads, n_q, n_k)
    ctx = (ph @ vh).transpose(1, 0, 2).reshape(n_q, d)
    out = _result(
        ctx @ w.w_o.data,
        (q_rows, w.w_q, w.w_k, w.w_v, w.w_o) + tuple(t for p in parts for t in (p[1], p[2])),
    )

    def backward():
        g = out.grad
        _accumulate(w.w_o, ctx.T @ g)
        dctx = (g @ w.w_o.data.T).reshape(n_q, n_heads, dh).transpose(1, 0, 2)
        dp = dctx @ vh.transpose(0, 2, 1)
        dvh = ph.transpose(0, 2, 1) @ dctx
        ds = kernels.softmax_backward(probs, dp.reshape(n_heads * n_q, n_k))
        ds = ds.reshape(n_heads, n_q, n_k) * scale
        dq = (ds @ kh).transpose(1, 0, 2).reshape(n_q, d)
        dk = (ds.transpose(0, 2, 1) @ qh).transpose(1, 0, 2).reshape(n_k, d)
        dv = dvh.transpose(1, 0, 2).reshape(n_k, d)
        _accumulate(w.w_q, xq.T @ dq)
        _accumulate(q_rows, dq @ w.w_q.data.T)
        row = 0
        for kind, k_src, v_src in parts:
            nr = k_src.shape[0]
            dk_part = dk[row : row + nr]
            dv_part = dv[row : row + nr]
            if kind == "proj":
                _accumulate(w.w_k, k_src.data.T @ dk_part)
                _accumulate(k_src, dk_part @ w.w_k.data.T)
                _accumulate(w.w_v, v_src.data.T @ dv_part)
                _accumulate(v_src, dv_part @ w.w_v.data.T)
            else:
                _accumulate(k_src, dk_part)
                _accumulate(v_src, dv_part)
            row += nr

    out._backward = backward if out.requires_grad else None
    return out


def standard_attention(
    cfg: AttentionConfig,
    q_in: Tensor,
    k_in: Tensor,
    v_in: Tensor,
    w: LayerWeights,
    mask: AttentionMask | None = None,
) -> Tensor:
    """Masked multi-head attention with all inputs projected through ``w``."""
    return _multi_head(cfg, w, q_in, [("proj", k_in, v_in)], mask)


def compose_propagation_input(x: Tensor, p_l: Tensor, layer: int, prefix_len: int) -> Tensor:
    """Attach this layer's prefix parameters to the hidden sequence.

    Layer 1 concatenates the prefix rows in front of the input; deeper
    layers sum the layer's prefix matrix onto the first ``prefix_len``
    hidden rows, so the sequence length never grows past j + m.
    """
    if layer < 1:
        raise ConfigError(f"layer index is 1-based, got {layer}")
    j = prefix_len
    if j == 0:
        return x
    if p_l.shape != (j, x.shape[1]):
        raise ShapeError(f"prefix shape {p_l.shape} != ({j}, {x.shape[1]})")
    if layer == 1:
        return concat_rows([p_l, x])
    if x.shape[0] <= j:
        raise ShapeError(
            f"layer {layer} input must carry {j} prefix rows plus the sequence, got {x.shape[0]} rows"
        )
    front = add(p_l, slice_rows(x, 0, j))
    return concat_rows([front, slice_rows(x, j, x.shape[0])])


def prefix_propagation_attention(
    cfg: AttentionConfig, d_in: Tensor, w: LayerWeights, mask: AttentionMask | None = None
) -> Tensor:
    """Self-attention over the composed sequence (prefix rows included).

    With ``cfg.prefix_len == 0`` this is bit-identical to
    ``standard_attention`` on the raw input.
    """
    return _multi_head(cfg, w, d_in, [("proj", d_in, d_in)], mask)


def prefix_tuning_attention(
    cfg: AttentionConfig,
    c_in: Tensor,
    p_k: Tensor,
    p_v: Tensor,
    w: LayerWeights,
    mask: AttentionMask | None = None,
) -> Tensor:
    """Attention with trained key/value rows prepended statically.

    ``p_k``/``p_v`` are (j, d_model) and are read per head as column
    slices; they are never projected.  Queries come from ``c_in`` alone, so
    the output has ``c_in.shape[0]`` rows.  ``mask`` covers the composed
    key axis; its first j columns (prefix keys) are always allowed.
    """
    if p_k.shape != p_v.shape:
        raise ConfigError(f"p_k shape {p_k.shape} != p_v shape {p_v.shape}")
    return _multi_head(cfg, w, c_in, [("raw", p_k, p_v), ("proj", c_in, c_in)], mask)


# ---------------------------------------------------------------------------
# kernel view
# ---------------------------------------------------------------------------


def exp_kernel(x_q, x_k, d_k: int) -> float:
    """Similarity score exp(<x_q, x_k> / sqrt(d_k)); always positive."""
    if d_k < 1:
        raise ConfigError(f"d_k must be >= 1, got {d_k}")
    q = np.asarray(x_q, dtype=np.float64).ravel()
    k = np.asarray(x_k, dtype=np.float64).ravel()
    return float(math.exp(float(q @ k) / math.sqrt(d_k)))


def kernel_attention(q, k, v) -> np.ndarray:
    """Kernel smoothing of value rows: out_i = sum_j k(q_i,k_j) v_j / sum_j k(q_i,k_j).

    Uses the exponential kernel with d_k = key width, which makes this
    identical to unmasked softmax attention.  Row maxima are subtracted
    before exponentiation; the weights are scale-invariant so the result
    is unchanged.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if k.shape[0] == 0:
        raise EmptyKeysError("kernel attention needs at least one key/value row")
    logits = q @ k.T / math.sqrt(k.shape[1])
    weights = np.exp(logits - logits.max(axis=1, keepdims=True))
    return (weights @ v) / weights.sum(axis=1, keepdims=True)


def _head_lambda(q, k_prefix, k_seq, d_h, seq_allow):
    """Per-query prefix mass fraction for one head, in float64.

    Shares one max-subtraction across both key groups so the two partial
    sums are exactly the terms of the full softmax normalizer.
    """
    lp = q @ k_prefix.T / math.sqrt(d_h) if k_prefix.shape[0] else np.zeros((q.shape[0], 0))
    lc = q @ k_seq.T / math.sqrt(d_h)
    if seq_allow is not None:
        lc = np.where(seq_allow, lc, -np.inf)
    m = np.maximum(
        lp.max(axis=1, initial=-np.inf), lc.max(axis=1, initial=-np.inf)
    )[:, None]
    sp = np.exp(lp - m).sum(axis=1) if lp.shape[1] else np.zeros(q.shape[0])
    sc = np.where(np.isfinite(lc), np.exp(lc - m), 0.0).sum(axis=1)
    return sp / (sp + sc), lp, lc


def lambda_weights(
    cfg: AttentionConfig, prefix, seq, w: LayerWeights, mask: AttentionMask | None = None
) -> KernelWeighting:
    """Exact per-head, per-query weighting between the two kernel modules.

    For query row i the prefix module receives
    lambda_i = sum_p exp(q_i k_p / sqrt(d_h)) /
               (sum_p exp(q_i k_p / sqrt(d_h)) + sum_c exp(q_i k_c / sqrt(d_h)))
    and the sequence module 1 - lambda_i; both sums run over unmasked keys
    only (prefix keys are never masked).
    """
    p = prefix.data if isinstance(prefix, Tensor) else np.asarray(prefix, dtype=np.float64)
    c = seq.data if isinstance(seq, Tensor) else np.asarray(seq, dtype=np.float64)
    d_full = np.concatenate([p, c], axis=0)
    j = p.shape[0]
    seq_allow = mask.allow[:, j:] if mask is not None else None
    dh = cfg.d_head
    lam = np.empty((cfg.n_heads, d_full.shape[0]))
    for h in range(cfg.n_heads):
        lo, hi = h * dh, (h + 1) * dh
        q = d_full @ w.w_q.data[:, lo:hi]
        kp = p @ w.w_k.data[:, lo:hi]
        kc = c @ w.w_k.data[:, lo:hi]
        lam[h], _, _ = _head_lambda(q, kp, kc, dh, seq_allow)
    return KernelWeighting(lam=lam, alpha="exact")


def kernel_decomposed_attention(
    cfg: AttentionConfig,
    d_in: Tensor,
    w: LayerWeights,
    alpha,
    mask: AttentionMask | None = None,
) -> Tensor:
    """Propagation attention split into sequence and prefix kernel modules.

    ``d_in`` is the composed (j + m, d) sequence; its first
    ``cfg.prefix_len`` rows are the prefix block.  ``alpha="exact"``
    combines the modules per query row with weights (1 - lambda_i,
    lambda_i), reconstructing full attention over the composed sequence (a
    float64 verification path, not differentiable).  A numeric
    ``alpha > 0`` multiplies the prefix module's kernel scores before the
    row normalization is recomputed over both modules, keeping every output
    row a convex combination of value rows; alpha = 1 coincides with the
    exact weighting.
    """
    j = cfg.prefix_len
    if d_in.shape[0] < j:
        raise ShapeError(f"composed input has {d_in.shape[0]} rows but prefix_len is {j}")
    if alpha != "exact":
        try:
            alpha = float(alpha)
        except (TypeError, ValueError):
            raise ConfigError(f'alpha must be a positive number or "exact", got {alpha!r}') from None
        if alpha <= 0:
            raise ConfigError(f"alpha must be positive, got {alpha}")

    if j == 0:
        return _multi_head(cfg, w, d_in, [("proj", d_in, d_in)], mask)

    prefix = slice_rows(d_in, 0, j)
    seq = slice_rows(d_in, j, d_in.shape[0])

    if alpha == "exact":
        allow = mask.allow if mask is not None else None
        return Tensor(_exact_decomposition(cfg, prefix.data, seq.data, w, allow))

    shift = np.zeros((d_in.shape[0], d_in.shape[0]), dtype=d_in.dtype)
    shift[:, :j] = math.log(alpha)
    return _multi_head(
        cfg, w, d_in, [("proj", prefix, prefix), ("proj", seq, seq)], mask, shift=shift
    )


def _exact_decomposition(cfg, p, c, w, allow):
    """Two separately-normalized kernel modules recombined with lambda."""
    j = p.shape[0]
    dh = cfg.d_head
    seq_allow = allow[:, j:] if allow is not None else None
    head_outs = []
    for h in range(cfg.n_heads):
        lo, hi = h * dh, (h + 1) * dh
        q = np.concatenate([p, c], axis=0) @ w.w_q.data[:, lo:hi]
        kp = p @ w.w_k.data[:, lo:hi]
        kc = c @ w.w_k.data[:, lo:hi]
        vp = p @ w.w_v.data[:, lo:hi]
        vc = c @ w.w_v.data[:, lo:hi]
        lam, lp, lc = _head_lambda(q, kp, kc, dh, seq_allow)
        prob_p = np.exp(lp - lp.max(axis=1, keepdims=True))
        prob_p /= prob_p.sum(axis=1, keepdims=True)
        mc = lc.max(axis=1, keepdims=True)
        prob_c = np.where(np.isfinite(lc), np.exp(lc - mc), 0.0)
        prob_c /= prob_c.sum(axis=1, keepdims=True)
        head_outs.append(lam[:, None] * (prob_p @ vp) + (1.0 - lam)[:, None] * (prob_c @ vc))
    return np.concatenate(head_outs, axis=1) @ w.w_o.data
