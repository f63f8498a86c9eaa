"""Training loop: cross-entropy, AdamW, linear warmup-then-decay schedule,
early stopping with best-checkpoint restore.  Fully seeded; identical
(seed, config, data) reproduce identical epoch logs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .calibration import collect_predictions, ece
from .errors import ConfigError, DivergenceError
from .model import EncoderModel
from .tensor import Tensor, cross_entropy_rows, sum_all

# learning-rate presets; prefix methods tolerate far larger steps than
# full fine-tuning of the backbone
PREFIX_LR_GRID = (1e-2, 5e-2, 1e-3, 5e-3, 5e-4)
FINE_TUNING_LR_GRID = (3e-5, 5e-5)
DEFAULT_PREFIX_LR = 5e-3
DEFAULT_FINE_TUNING_LR = 5e-5
ALPHA_GRID = (1e-2, 4e-2, 1e-3, 3e-3, 5e-3, 7e-3)


def default_lr(mode: str) -> float:
    return DEFAULT_FINE_TUNING_LR if mode == "fine_tuning" else DEFAULT_PREFIX_LR


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = DEFAULT_PREFIX_LR
    warmup_fraction: float = 0.1
    schedule: str = "linear"
    dropout: float = 0.1
    weight_decay: float = 0.01
    seed: int = 0
    early_stop_patience: int | None = None
    metric: str = "accuracy"
    micro_batch_size: int | None = None  # gradient accumulation when set
    decay_prefixes: bool = True
    stop_at_metric: float | None = None  # end training once dev metric reaches this

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ConfigError(f"warmup_fraction must be in [0, 1), got {self.warmup_fraction}")
        if self.schedule != "linear":
            raise ConfigError(f'only the "linear" schedule is supported, got {self.schedule!r}')
        if self.metric not in ("accuracy", "f1_micro"):
            raise ConfigError(f"metric must be accuracy or f1_micro, got {self.metric!r}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("epochs and batch_size must be >= 1")


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """-log softmax(logits)[label] as a differentiable scalar."""
    return sum_all(cross_entropy_rows(logits, [label]))


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear ramp 0 -> lr over the warmup span, then linear decay to 0."""
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    warmup = cfg.warmup_fraction * total_steps
    if warmup > 0 and step < warmup:
        return cfg.lr * step / warmup
    if total_steps == warmup:
        return cfg.lr
    return cfg.lr * (total_steps - step) / (total_steps - warmup)


class AdamW:
    """Bias-corrected Adam with decoupled weight decay.

    Decay multiplies the parameter by (1 - lr * wd) before the moment
    update; it never enters the gradients.  Parameters listed in
    ``no_decay`` are exempt.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
        no_decay: frozenset[str] = frozenset(),
    ):
        self.params = dict(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.no_decay = frozenset(no_decay)
        self.step_count = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self, lr_now: float) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ConfigError(f"gradient shape {g.shape} != parameter shape {p.data.shape} for {name}")
            if self.weight_decay and name not in self.no_decay:
                p.data *= 1.0 - lr_now * self.weight_decay
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p.data -= lr_now * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def accuracy(predicted, labels) -> float:
    predicted = np.asarray(predicted)
    labels = np.asarray(labels)
    return float((predicted == labels).mean())


def f1_micro(predicted, labels, n_classes: int) -> float:
    """Micro-averaged F1 over classes (pooled TP/FP/FN)."""
    predicted = np.asarray(predicted)
    labels = np.asarray(labels)
    tp = fp = fn = 0
    for c in range(n_classes):
        tp += int(((predicted == c) & (labels == c)).sum())
        fp += int(((predicted == c) & (labels != c)).sum())
        fn += int(((predicted != c) & (labels == c)).sum())
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def macro_precision_recall(predicted, labels, n_classes: int) -> tuple[float, float]:
    """Unweighted class means of precision and recall (0 for empty denominators)."""
    predicted = np.asarray(predicted)
    labels = np.asarray(labels)
    precisions, recalls = [], []
    for c in range(n_classes):
        tp = int(((predicted == c) & (labels == c)).sum())
        fp = int(((predicted == c) & (labels != c)).sum())
        fn = int(((predicted != c) & (labels == c)).sum())
        precisions.append(tp / (tp + fp) if tp + fp else 0.0)
        recalls.append(tp / (tp + fn) if tp + fn else 0.0)
    return float(np.mean(precisions)), float(np.mean(recalls))


def _dev_eval(model: EncoderModel, dataset, metric: str):
    records = collect_predictions(model, dataset)
    predicted = [r.predicted for r in records]
    labels = [r.label for r in records]
    if metric == "accuracy":
        value = accuracy(predicted, labels)
    else:
        value = f1_micro(predicted, labels, dataset.n_classes)
    return value, ece(records, n_bins=10).ece


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: EncoderModel
    log: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_metric: float = float("-inf")


def train(model: EncoderModel, train_ds, dev_ds, cfg: TrainConfig) -> TrainResult:
    """Optimize the trainable partition; restore the best-dev checkpoint.

    Emits one log entry per epoch with train loss, dev metric, dev ECE and
    the current learning rate.  Raises :class:`DivergenceError` naming the
    step when the loss goes non-finite.
    """
    if not train_ds.examples or not dev_ds.examples:
        raise ConfigError("train and dev splits must be nonempty")
    trainables = model.trainable_parameters()
    no_decay = (
        frozenset(n for n in trainables if n.startswith("bank."))
        if not cfg.decay_prefixes
        else frozenset()
    )
    opt = AdamW(trainables, weight_decay=cfg.weight_decay, no_decay=no_decay)
    rng = np.random.default_rng(cfg.seed)
    n = len(train_ds.examples)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    micro = cfg.micro_batch_size or cfg.batch_size

    result = TrainResult(model=model)
    best_snapshot = None
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for b in range(steps_per_epoch):
            batch = [train_ds.examples[k] for k in order[b * cfg.batch_size : (b + 1) * cfg.batch_size]]
            opt.zero_grad()
            batch_loss = 0.0
            for off in range(0, len(batch), micro):
                chunk = batch[off : off + micro]
                loss = model.batch_loss(chunk, train=True, dropout_rate=cfg.dropout, rng=rng)
                loss = loss * (len(chunk) / len(batch))
                loss.backward()
                batch_loss += loss.item()
            if not math.isfinite(batch_loss):
                raise DivergenceError(f"non-finite loss at step {step}")
            opt.step(lr_at(step, total_steps, cfg))
            step += 1
            epoch_loss += batch_loss
        dev_metric, dev_ece = _dev_eval(model, dev_ds, cfg.metric)
        result.log.append(
            {
                "epoch": epoch,
                "step": step,
                "train_loss": epoch_loss / steps_per_epoch,
                "dev_metric": dev_metric,
                "dev_ece": dev_ece,
                "lr": lr_at(step, total_steps, cfg),
                "mode": model.mode,
                "seed": cfg.seed,
            }
        )
        if dev_metric > result.best_metric:
            result.best_metric = dev_metric
            result.best_epoch = epoch
            best_snapshot = {name: t.data.copy() for name, t in trainables.items()}
        elif (
            cfg.early_stop_patience is not None
            and epoch - result.best_epoch >= cfg.early_stop_patience
        ):
            break
        if cfg.stop_at_metric is not None and dev_metric >= cfg.stop_at_metric:
            break
    if best_snapshot is not None:
        for name, data in best_snapshot.items():
            trainables[name].data = data
    return result
