"""Deterministic synthetic long-sequence classification tasks, plus a
loader for small labeled-text CSV corpora.

Generation is pure and portable: every example draws from its own
SplitMix64 stream seeded by ``derive_seed(seed, split_key, example_index)``
(see :mod:`prefixprop.rng` for the exact algorithm), so shard-parallel
generation concatenates to exactly the serial result and datasets are
byte-identical across platforms and implementations.

Token id layout used by the generators:

* 0: classification token (always first in every sequence),
* 1 .. n_classes: class/needle tokens (class c maps to id 1 + c),
* n_classes + 1 .. n_classes + n_filler: filler tokens.

Labels are exactly class-balanced: example i in block b = i // n_classes
takes the (i mod n_classes)-th element of a pseudorandom permutation of
the classes derived from (seed, split, b).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

from .errors import ConfigError, LabelError, ParseError
from .model import CLS_ID
from .rng import SplitMix64, derive_seed

SPLIT_KEYS = {"train": 1, "dev": 2, "test": 3}
_LABEL_BLOCK_KEY = 101
_EXAMPLE_KEY = 202


@dataclass
class Dataset:
    examples: list[tuple[list[int], int]]
    n_classes: int
    split: str
    seed: int
    vocab_size: int = 0
    label_names: list[str] | None = None

    def __len__(self) -> int:
        return len(self.examples)

    def labels(self) -> list[int]:
        return [label for _, label in self.examples]


def _split_key(split: str) -> int:
    if split not in SPLIT_KEYS:
        raise ConfigError(f"split must be one of {sorted(SPLIT_KEYS)}, got {split!r}")
    return SPLIT_KEYS[split]


def _balanced_label(seed: int, split_key: int, index: int, n_classes: int) -> int:
    block, offset = divmod(index, n_classes)
    perm = list(range(n_classes))
    SplitMix64(derive_seed(seed, split_key, _LABEL_BLOCK_KEY, block)).shuffle(perm)
    return perm[offset]


def gen_needle(
    seq_len: int,
    n_classes: int,
    n: int,
    seed: int,
    *,
    window: int = 32,
    n_filler: int = 8,
    split: str = "train",
    vocab_size: int | None = None,
) -> Dataset:
    """Filler sequences with one class-determining needle token.

    The needle for class c (token id 1 + c) is planted at a uniformly
    random position in [window + 1, seq_len - 1] -- strictly beyond the
    sliding window around the classification token at position 0, so only
    a global attention path can reach it.
    """
    if seq_len < 16:
        raise ConfigError(f"seq_len must be >= 16, got {seq_len}")
    if seq_len - 1 - window < 1:
        raise ConfigError(f"seq_len {seq_len} leaves no needle slot beyond window {window}")
    needed = 1 + n_classes + n_filler
    if vocab_size is not None and needed > vocab_size:
        raise ConfigError(
            f"vocab_size {vocab_size} too small for {n_classes} needle tokens "
            f"plus {n_filler} filler tokens"
        )
    key = _split_key(split)
    filler_base = 1 + n_classes
    examples = []
    for i in range(n):
        label = _balanced_label(seed, key, i, n_classes)
        stream = SplitMix64(derive_seed(seed, key, _EXAMPLE_KEY, i))
        tokens = [CLS_ID] + [filler_base + stream.randint(n_filler) for _ in range(seq_len - 1)]
        pos = window + 1 + stream.randint(seq_len - 1 - window)
        tokens[pos] = 1 + label
        examples.append((tokens, label))
    return Dataset(examples, n_classes, split, seed, vocab_size=vocab_size or needed)


def gen_majority(
    seq_len: int,
    n_classes: int,
    n: int,
    seed: int,
    *,
    bias: float = 0.5,
    split: str = "train",
    vocab_size: int | None = None,
) -> Dataset:
    """Class tokens scattered over the sequence; the label is the majority.

    Each non-CLS position draws the designated class's token with
    probability ``bias`` and otherwise a uniformly random class token.  An
    example whose argmax is tied or disagrees with the designated class is
    regenerated from the same per-example stream.
    """
    if seq_len < 16:
        raise ConfigError(f"seq_len must be >= 16, got {seq_len}")
    if not 0.0 <= bias < 1.0:
        raise ConfigError(f"bias must be in [0, 1), got {bias}")
    needed = 1 + n_classes
    if vocab_size is not None and needed > vocab_size:
        raise ConfigError(f"vocab_size {vocab_size} too small for {n_classes} class tokens")
    key = _split_key(split)
    examples = []
    for i in range(n):
        label = _balanced_label(seed, key, i, n_classes)
        stream = SplitMix64(derive_seed(seed, key, _EXAMPLE_KEY, i))
        while True:
            counts = [0] * n_classes
            tokens = [CLS_ID]
            for _ in range(seq_len - 1):
                c = label if stream.uniform() < bias else stream.randint(n_classes)
                counts[c] += 1
                tokens.append(1 + c)
            top = max(counts)
            if counts[label] == top and counts.count(top) == 1:
                break
        examples.append((tokens, label))
    return Dataset(examples, n_classes, split, seed, vocab_size=vocab_size or needed)


GENERATORS = {"needle": gen_needle, "majority": gen_majority}


# ---------------------------------------------------------------------------
# JSON Lines interchange
# ---------------------------------------------------------------------------


def write_jsonl(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tokens, label in dataset.examples:
            fh.write(json.dumps({"tokens": tokens, "label": label}, separators=(",", ":")))
            fh.write("\n")


def read_jsonl(path, *, split: str = "train", seed: int = 0, n_classes: int | None = None) -> Dataset:
    examples = []
    max_id = 0
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                tokens = [int(t) for t in row["tokens"]]
                label = int(row["label"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"line {line_no}: malformed JSONL record ({exc})") from None
            examples.append((tokens, label))
            max_id = max(max_id, max(tokens, default=0))
    if n_classes is None:
        n_classes = max(label for _, label in examples) + 1 if examples else 0
    return Dataset(examples, n_classes, split, seed, vocab_size=max_id + 1)


# ---------------------------------------------------------------------------
# labeled-text CSV loader
# ---------------------------------------------------------------------------

UNK_ID = 1


@dataclass
class TokenizerSpec:
    """Deterministic tokenization rule with a fixed vocabulary.

    ``whitespace`` splits on runs of whitespace and maps each token
    through a vocabulary file (one token per line; line k maps to id
    k + 2, ids 0/1 are reserved for CLS/UNK).  ``byte`` maps each UTF-8
    byte b to id b + 2 (fixed vocabulary of 258).
    """

    mode: str = "byte"
    vocab_file: str | None = None
    max_len: int = 512
    lowercase: bool = False
    _vocab: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.mode not in ("whitespace", "byte"):
            raise ConfigError(f'tokenizer mode must be "whitespace" or "byte", got {self.mode!r}')
        if self.mode == "whitespace":
            if self.vocab_file is None:
                raise ConfigError("whitespace tokenizer needs a vocab_file")
            with open(self.vocab_file, encoding="utf-8") as fh:
                for k, line in enumerate(fh):
                    self._vocab[line.rstrip("\n")] = k + 2

    @property
    def vocab_size(self) -> int:
        return 2 + (258 - 2 if self.mode == "byte" else len(self._vocab))

    def encode(self, text: str) -> list[int]:
        if self.lowercase:
            text = text.lower()
        if self.mode == "byte":
            ids = [2 + b for b in text.encode("utf-8")]
        else:
            ids = [self._vocab.get(tok, UNK_ID) for tok in text.split()]
        return [CLS_ID] + ids[: self.max_len - 1]


def load_labeled_text(
    path,
    tokenizer: TokenizerSpec,
    *,
    split: str = "train",
    label_names: list[str] | None = None,
) -> Dataset:
    """Load a ``text,label`` CSV into a Dataset.

    Label indices are assigned by lexicographic sort over the labels seen
    in the file; pass ``label_names`` from the training split when loading
    eval splits so unseen labels fail loudly instead of renumbering.
    """
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["text", "label"]:
            raise ParseError(f"line 1: expected header 'text,label', got {header!r}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(f"line {line_no}: expected 2 fields, got {len(row)}")
            rows.append((row[0], row[1]))
    if label_names is None:
        label_names = sorted({label for _, label in rows})
    index = {name: k for k, name in enumerate(label_names)}
    examples = []
    for text, label in rows:
        if label not in index:
            raise LabelError(f"unknown label {label!r}; known labels: {label_names}")
        examples.append((tokenizer.encode(text), index[label]))
    return Dataset(
        examples,
        n_classes=len(label_names),
        split=split,
        seed=0,
        vocab_size=tokenizer.vocab_size,
        label_names=list(label_names),
    )
