"""Small frozen-backbone transformer encoder with switchable tuning modes.

The backbone (embeddings + layers) is a deterministic seeded stand-in for
a pretrained model.  In the prefix modes it is frozen; only the prefix
bank, the classification head, and the classification-token embedding
train.  ``fine_tuning`` trains everything and carries no bank.

Layer layout is post-norm: x = LN(x + Attn(x)); x = LN(x + FFN(x)), with a
layer norm over the embeddings before the first layer.  The classification
token sits at sequence position 0 and is configured as a global position;
in the propagation modes it lands at composed row ``prefix_len``, so the
readout row is mode-dependent and centralized in :meth:`EncoderModel.cls_row`.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass

import numpy as np

from .attention import (
    AttentionConfig,
    AttentionMask,
    LayerWeights,
    PrefixBank,
    build_mask,
    compose_propagation_input,
    kernel_decomposed_attention,
    prefix_propagation_attention,
    prefix_tuning_attention,
    standard_attention,
)
from .errors import ConfigError, SequenceLengthError
from .tensor import (
    Tensor,
    add,
    cross_entropy_rows,
    dropout,
    embedding_rows,
    gelu,
    layer_norm,
    matmul,
    no_grad,
    slice_rows,
    sum_all,
)

CLS_ID = 0

MODES = ("fine_tuning", "prefix_tuning", "prefix_propagation", "propagation_kernel")
PREFIX_MODES = ("prefix_tuning", "prefix_propagation", "propagation_kernel")
PROPAGATION_MODES = ("prefix_propagation", "propagation_kernel")

PREFIX_INIT_STD = 0.02
EMBED_INIT_STD = 0.02
HEAD_INIT_STD = 0.02


@dataclass
class ParameterPartition:
    """Named trainable/frozen parameter counts for one model."""

    trainable: list[tuple[str, int]]
    frozen: list[tuple[str, int]]

    @property
    def trainable_total(self) -> int:
        return sum(n for _, n in self.trainable)

    @property
    def frozen_total(self) -> int:
        return sum(n for _, n in self.frozen)

    @property
    def total(self) -> int:
        return self.trainable_total + self.frozen_total

    @property
    def trainable_fraction(self) -> float:
        return self.trainable_total / self.total


class EncoderModel:
    def __init__(
        self,
        cfg: AttentionConfig,
        *,
        vocab_size: int,
        max_len: int,
        n_classes: int,
        n_layers: int,
        mode: str = "fine_tuning",
        alpha: float = 1.0,
        seed: int = 0,
        dtype=np.float64,
        ffn_mult: int = 4,
    ):
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}, expected one of {MODES}")
        if mode == "propagation_kernel" and not (isinstance(alpha, (int, float)) and alpha > 0):
            raise ConfigError(f"propagation_kernel requires a positive numeric alpha, got {alpha!r}")
        if vocab_size < 2:
            raise ConfigError(f"vocab_size must be >= 2, got {vocab_size}")
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.max_len = max_len
        self.n_classes = n_classes
        self.n_layers = n_layers
        self.mode = mode
        self.alpha = float(alpha)
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.ffn_mult = ffn_mult
        self._mask_cache: dict[int, AttentionMask] = {}

        d = cfg.d_model
        rng = np.random.default_rng(seed)

        def gauss(shape, std):
            return Tensor(rng.normal(0.0, std, size=shape).astype(self.dtype))

        w_std = d**-0.5
        self.tok_table = gauss((vocab_size, d), EMBED_INIT_STD)
        self.cls_emb = gauss((1, d), EMBED_INIT_STD)
        self.pos_table = gauss((max_len, d), EMBED_INIT_STD)
        self.emb_ln_gamma = Tensor(np.ones((1, d), dtype=self.dtype))
        self.emb_ln_beta = Tensor(np.zeros((1, d), dtype=self.dtype))
        d_ff = ffn_mult * d
        self.layers: list[LayerWeights] = []
        for _ in range(n_layers):
            self.layers.append(
                LayerWeights(
                    w_q=gauss((d, d), w_std),
                    w_k=gauss((d, d), w_std),
                    w_v=gauss((d, d), w_std),
                    w_o=gauss((d, d), w_std),
                    w_ff1=gauss((d, d_ff), w_std),
                    b_ff1=Tensor(np.zeros((1, d_ff), dtype=self.dtype)),
                    w_ff2=gauss((d_ff, d), d_ff**-0.5),
                    b_ff2=Tensor(np.zeros((1, d), dtype=self.dtype)),
                    ln1_gamma=Tensor(np.ones((1, d), dtype=self.dtype)),
                    ln1_beta=Tensor(np.zeros((1, d), dtype=self.dtype)),
                    ln2_gamma=Tensor(np.ones((1, d), dtype=self.dtype)),
                    ln2_beta=Tensor(np.zeros((1, d), dtype=self.dtype)),
                )
            )
        self.head_w = gauss((d, n_classes), HEAD_INIT_STD)
        self.head_b = Tensor(np.zeros((1, n_classes), dtype=self.dtype))

        j = cfg.prefix_len
        self.bank: PrefixBank | None = None
        if mode in PROPAGATION_MODES:
            self.bank = PrefixBank(
                mode="propagation", p=[gauss((j, d), PREFIX_INIT_STD) for _ in range(n_layers)]
            )
        elif mode == "prefix_tuning":
            self.bank = PrefixBank(
                mode="prefix_tuning",
                p_k=[gauss((j, d), PREFIX_INIT_STD) for _ in range(n_layers)],
                p_v=[gauss((j, d), PREFIX_INIT_STD) for _ in range(n_layers)],
            )
        self._apply_freeze()

    # -- parameter bookkeeping -------------------------------------------

    def _apply_freeze(self) -> None:
        head_names = {"head.w", "head.b"}
        always_trainable = head_names | {"embeddings.cls"}
        for name, t in self.named_parameters().items():
            if self.mode == "fine_tuning":
                t.requires_grad = True
            else:
                t.requires_grad = name.startswith("bank.") or name in always_trainable

    def named_parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {
            "embeddings.cls": self.cls_emb,
            "embeddings.table": self.tok_table,
            "embeddings.pos": self.pos_table,
            "embeddings.ln_gamma": self.emb_ln_gamma,
            "embeddings.ln_beta": self.emb_ln_beta,
        }
        for l, w in enumerate(self.layers):
            for name, t in w.named():
                params[f"layers.{l}.{name}"] = t
        if self.bank is not None:
            params.update(dict(self.bank.tensors()))
        params["head.w"] = self.head_w
        params["head.b"] = self.head_b
        return params

    def trainable_parameters(self) -> dict[str, Tensor]:
        return {n: t for n, t in self.named_parameters().items() if t.requires_grad}

    @property
    def prefix_len(self) -> int:
        return self.bank.prefix_len if self.bank is not None else 0

    def cls_row(self) -> int:
        """Composed row index holding the classification token's state."""
        return self.prefix_len if self.mode in PROPAGATION_MODES else 0

    # -- forward -----------------------------------------------------------

    def _masks(self, seq_len: int) -> tuple[AttentionMask, AttentionMask]:
        """Composed mask plus its query-rows slice for prefix-tuning."""
        cached = self._mask_cache.get(seq_len)
        if cached is None:
            full = build_mask(self.cfg.with_prefix_len(self.prefix_len), seq_len)
            tuning = AttentionMask(full.allow[self.prefix_len :, :])
            cached = (full, tuning)
            self._mask_cache[seq_len] = cached
        return cached

    def forward(self, tokens, train: bool = False, dropout_rate: float = 0.0, rng=None) -> Tensor:
        """Logits for one token sequence, shape (1, n_classes)."""
        tokens = np.asarray(tokens, dtype=np.int64)
        m = tokens.shape[0]
        if m == 0:
            raise SequenceLengthError("empty token sequence")
        if m > self.max_len:
            raise SequenceLengthError(f"sequence length {m} exceeds max_len {self.max_len}")
        if tokens[0] != CLS_ID:
            raise ConfigError(f"sequences must start with the CLS id {CLS_ID}, got {tokens[0]}")
        if train and dropout_rate > 0.0 and rng is None:
            raise ConfigError("training forward with dropout needs an rng")

        j = self.prefix_len
        mask, tuning_mask = self._masks(m)
        mask_cfg = self.cfg.with_prefix_len(j)

        emb = embedding_rows(tokens, self.cls_emb, self.tok_table, cls_id=CLS_ID)
        h = add(emb, slice_rows(self.pos_table, 0, m))
        h = layer_norm(h, self.emb_ln_gamma, self.emb_ln_beta)

        for l, w in enumerate(self.layers):
            layer = l + 1
            if self.mode in PROPAGATION_MODES:
                h = compose_propagation_input(h, self.bank.p[l], layer, j)
            if layer == 1:
                h = dropout(h, dropout_rate, rng, train)
            if self.mode == "fine_tuning":
                attn = standard_attention(mask_cfg, h, h, h, w, mask)
            elif self.mode == "prefix_tuning":
                attn = prefix_tuning_attention(
                    mask_cfg, h, self.bank.p_k[l], self.bank.p_v[l], w, tuning_mask
                )
            elif self.mode == "prefix_propagation":
                attn = prefix_propagation_attention(mask_cfg, h, w, mask)
            else:
                attn = kernel_decomposed_attention(mask_cfg, h, w, self.alpha, mask)
            h = layer_norm(add(h, dropout(attn, dropout_rate, rng, train)), w.ln1_gamma, w.ln1_beta)
            ffn = add(matmul(gelu(add(matmul(h, w.w_ff1), w.b_ff1)), w.w_ff2), w.b_ff2)
            h = layer_norm(add(h, dropout(ffn, dropout_rate, rng, train)), w.ln2_gamma, w.ln2_beta)

        read = slice_rows(h, self.cls_row(), self.cls_row() + 1)
        return add(matmul(read, self.head_w), self.head_b)

    def logits(self, tokens) -> np.ndarray:
        """Eval-mode forward without graph recording."""
        with no_grad():
            return self.forward(tokens).data[0].copy()

    def batch_loss(self, batch, train: bool = False, dropout_rate: float = 0.0, rng=None) -> Tensor:
        """Mean cross-entropy over a list of (tokens, label) pairs."""
        total = None
        for tokens, label in batch:
            out = self.forward(tokens, train=train, dropout_rate=dropout_rate, rng=rng)
            loss = sum_all(cross_entropy_rows(out, [label]))
            total = loss if total is None else add(total, loss)
        return total * (1.0 / len(batch))


BACKBONE_PREFIXES = ("embeddings.table", "embeddings.pos", "embeddings.ln", "layers.")


def derive_tuning_model(
    base: EncoderModel, mode: str, prefix_len: int, seed: int, alpha: float = 1.0
) -> EncoderModel:
    """New model for ``mode`` sharing ``base``'s backbone weights.

    The backbone (embeddings, positions, layers) and the classification
    token are copied from ``base`` -- typically a warm fine-tuning run
    standing in for a pretrained checkpoint; the head and any prefix bank
    are freshly initialized from ``seed``.
    """
    model = EncoderModel(
        base.cfg.with_prefix_len(prefix_len),
        vocab_size=base.vocab_size,
        max_len=base.max_len,
        n_classes=base.n_classes,
        n_layers=base.n_layers,
        mode=mode,
        alpha=alpha,
        seed=seed,
        dtype=base.dtype,
        ffn_mult=base.ffn_mult,
    )
    source = base.named_parameters()
    for name, t in model.named_parameters().items():
        if name.startswith(BACKBONE_PREFIXES) or name == "embeddings.cls":
            t.data = source[name].data.copy()
    return model


def partition_parameters(model: EncoderModel) -> ParameterPartition:
    trainable, frozen = [], []
    for name, t in model.named_parameters().items():
        (trainable if t.requires_grad else frozen).append((name, t.data.size))
    return ParameterPartition(trainable=trainable, frozen=frozen)


def freeze_check(model: EncoderModel, batch) -> bool:
    """One forward/backward; true iff no frozen parameter receives gradient
    while at least one prefix parameter does."""
    if model.mode == "fine_tuning":
        raise ConfigError("freeze_check applies to prefix modes only")
    params = model.named_parameters()
    for t in params.values():
        t.zero_grad()
    model.batch_loss(batch).backward()
    frozen_clean = all(
        t.grad is None or not np.any(t.grad) for t in params.values() if not t.requires_grad
    )
    prefix_live = any(
        t.grad is not None and np.any(t.grad) for name, t in params.items() if name.startswith("bank.")
    )
    return frozen_clean and prefix_live


# ---------------------------------------------------------------------------
# checkpoint io: a self-describing JSON container, bit-exact round trip
# ---------------------------------------------------------------------------

_CKPT_FORMAT = "prefixprop-checkpoint"
_CKPT_VERSION = 1


def save_checkpoint(model: EncoderModel, path) -> None:
    cfg = model.cfg
    doc = {
        "format": _CKPT_FORMAT,
        "version": _CKPT_VERSION,
        "config": {
            "d_model": cfg.d_model,
            "n_heads": cfg.n_heads,
            "prefix_len": cfg.prefix_len,
            "window": cfg.window,
            "global_positions": sorted(cfg.global_positions),
            "vocab_size": model.vocab_size,
            "max_len": model.max_len,
            "n_classes": model.n_classes,
            "n_layers": model.n_layers,
            "ffn_mult": model.ffn_mult,
            "mode": model.mode,
            "alpha": model.alpha,
            "seed": model.seed,
            "dtype": model.dtype.name,
        },
        "tensors": {
            name: {
                "shape": list(t.shape),
                "dtype": t.data.dtype.str,
                "data": base64.b64encode(np.ascontiguousarray(t.data).tobytes()).decode("ascii"),
            }
            for name, t in model.named_parameters().items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_checkpoint(path) -> EncoderModel:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != _CKPT_FORMAT:
        raise ConfigError(f"not a checkpoint file: {path}")
    c = doc["config"]
    cfg = AttentionConfig(
        d_model=c["d_model"],
        n_heads=c["n_heads"],
        prefix_len=c["prefix_len"],
        window=c["window"] if c["window"] == "full" else int(c["window"]),
        global_positions=frozenset(c["global_positions"]),
    )
    model = EncoderModel(
        cfg,
        vocab_size=c["vocab_size"],
        max_len=c["max_len"],
        n_classes=c["n_classes"],
        n_layers=c["n_layers"],
        mode=c["mode"],
        alpha=c["alpha"],
        seed=c["seed"],
        dtype=np.dtype(c["dtype"]),
        ffn_mult=c["ffn_mult"],
    )
    params = model.named_parameters()
    saved = doc["tensors"]
    if set(saved) != set(params):
        raise ConfigError("checkpoint tensor names do not match the reconstructed model")
    for name, entry in saved.items():
        arr = np.frombuffer(base64.b64decode(entry["data"]), dtype=np.dtype(entry["dtype"]))
        arr = arr.reshape(entry["shape"]).copy()
        if tuple(arr.shape) != params[name].shape:
            raise ConfigError(f"checkpoint tensor {name} has shape {arr.shape}, expected {params[name].shape}")
        params[name].data = arr
    return model
