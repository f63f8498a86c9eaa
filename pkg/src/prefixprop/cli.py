"""Experiment driver.

Subcommands: ``train`` (run an experiment config over its seeds), ``eval``
(score a saved checkpoint), ``verify-kernel`` (decomposition identity
check), ``bench`` (inference timing across tuning modes), ``bench-kernels``
(compiled vs python kernel backend), ``report`` (summary table from result
files), ``gen-data`` (export synthetic datasets).

Configuration is a single JSON file; ``--set key.path=value`` overrides
individual fields (flags win over the file).  Every command is a pure
function of (config, seed) to output bytes, except for the timing values
inside bench reports.  Exit codes: 0 success, 1 usage/config error,
2 verification failure, 3 training divergence.
"""

from __future__ import annotations

import copy
import json
import os
import statistics
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np

from . import kernels
from .attention import (
    AttentionConfig,
    LayerWeights,
    build_mask,
    kernel_decomposed_attention,
    prefix_propagation_attention,
)
from .calibration import collect_predictions, ece, write_reliability_csv
from .errors import ConfigError, DivergenceError, PrefixPropError, VerificationError
from .model import (
    EncoderModel,
    derive_tuning_model,
    load_checkpoint,
    partition_parameters,
    save_checkpoint,
)
from .tasks import GENERATORS, Dataset, TokenizerSpec, load_labeled_text, write_jsonl
from .tensor import Tensor, concat_rows, no_grad
from .training import (
    TrainConfig,
    accuracy,
    default_lr,
    f1_micro,
    macro_precision_recall,
    train,
)

DEFAULT_CONFIG = {
    "task": {
        "generator": "needle",
        "corpus": None,  # {"train_csv","dev_csv","test_csv","tokenizer":{...}}
        "seq_len": 256,
        "n_classes": 4,
        "n_train": 2000,
        "n_dev": 500,
        "n_test": 500,
        "window": 32,
        "n_filler": 8,
        "bias": 0.5,
        "seed": 42,
    },
    "model": {
        "d_model": 64,
        "n_heads": 4,
        "n_layers": 2,
        "prefix_len": 8,
        "window": 64,
        "global_positions": [0],
        "max_len": 512,
        "ffn_mult": 4,
        "dtype": "float64",
    },
    "mode": "prefix_propagation",
    "alpha": 1.0,
    "train": {
        "epochs": 10,
        "batch_size": 32,
        "lr": None,  # None -> per-mode preset default
        "warmup_fraction": 0.1,
        "schedule": "linear",
        "dropout": 0.1,
        "weight_decay": 0.01,
        "early_stop_patience": None,
        "metric": "accuracy",
        "micro_batch_size": None,
        "decay_prefixes": True,
        "stop_at_metric": None,
    },
    "warm": {
        # fine-tuning warm phase that produces the frozen backbone for
        # prefix modes (a stand-in for a pretrained checkpoint)
        "epochs": 4,
        "lr": 3e-4,
        "seed": 0,
        "stop_at_metric": 0.97,
        "dropout": 0.1,
    },
    "seeds": None,  # None -> [PREFIXPROP_SEED] or [0]
    "outdir": "results",
}


def _merge_config(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config field: {where}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge_config(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _apply_set(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set expects key.path=value, got {assignment!r}")
    dotted, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    parts = dotted.split(".")
    for i, part in enumerate(parts[:-1]):
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown config field: {'.'.join(parts[: i + 1])}")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config field: {dotted}")
    node[parts[-1]] = value


def load_config(config_path: str | None, sets: tuple[str, ...]) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if config_path is not None:
        try:
            with open(config_path, encoding="utf-8") as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {config_path} is not valid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg = _merge_config(cfg, user)
    for assignment in sets:
        _apply_set(cfg, assignment)
    if cfg["seeds"] is None:
        cfg["seeds"] = [int(os.environ.get("PREFIXPROP_SEED", "0"))]
    return cfg


# ---------------------------------------------------------------------------
# experiment assembly
# ---------------------------------------------------------------------------


def build_datasets(task: dict) -> tuple[Dataset, Dataset, Dataset]:
    if task.get("corpus"):
        corpus = task["corpus"]
        tok = TokenizerSpec(**corpus.get("tokenizer", {}))
        train_ds = load_labeled_text(corpus["train_csv"], tok, split="train")
        dev_ds = load_labeled_text(
            corpus["dev_csv"], tok, split="dev", label_names=train_ds.label_names
        )
        test_ds = load_labeled_text(
            corpus["test_csv"], tok, split="test", label_names=train_ds.label_names
        )
        return train_ds, dev_ds, test_ds
    name = task["generator"]
    if name not in GENERATORS:
        raise ConfigError(f"task.generator must be one of {sorted(GENERATORS)}, got {name!r}")
    common = dict(
        seq_len=task["seq_len"], n_classes=task["n_classes"], seed=task["seed"]
    )
    extra = {"window": task["window"], "n_filler": task["n_filler"]} if name == "needle" else {
        "bias": task["bias"]
    }
    gen = GENERATORS[name]
    return (
        gen(n=task["n_train"], split="train", **common, **extra),
        gen(n=task["n_dev"], split="dev", **common, **extra),
        gen(n=task["n_test"], split="test", **common, **extra),
    )


def _attention_config(model_cfg: dict) -> AttentionConfig:
    window = model_cfg["window"]
    return AttentionConfig(
        d_model=model_cfg["d_model"],
        n_heads=model_cfg["n_heads"],
        prefix_len=model_cfg["prefix_len"],
        window=window if window == "full" else int(window),
        global_positions=frozenset(model_cfg["global_positions"]),
    )


def _new_model(cfg: dict, vocab_size: int, n_classes: int, mode: str, seed: int) -> EncoderModel:
    mc = cfg["model"]
    return EncoderModel(
        _attention_config(mc),
        vocab_size=vocab_size,
        max_len=mc["max_len"],
        n_classes=n_classes,
        n_layers=mc["n_layers"],
        mode=mode,
        alpha=cfg["alpha"],
        seed=seed,
        dtype=np.dtype(mc["dtype"]),
        ffn_mult=mc["ffn_mult"],
    )


def _train_config(cfg: dict, seed: int, mode: str) -> TrainConfig:
    t = dict(cfg["train"])
    if t["lr"] is None:
        t["lr"] = default_lr(mode)
    return TrainConfig(seed=seed, **t)


def _warm_backbone(cfg: dict, train_ds: Dataset, dev_ds: Dataset) -> EncoderModel:
    """Fine-tuning warm phase standing in for a pretrained checkpoint."""
    warm = cfg["warm"]
    model = _new_model(cfg, train_ds.vocab_size, train_ds.n_classes, "fine_tuning", warm["seed"])
    warm_tc = TrainConfig(
        epochs=warm["epochs"],
        batch_size=cfg["train"]["batch_size"],
        lr=warm["lr"],
        dropout=warm["dropout"],
        seed=warm["seed"],
        metric=cfg["train"]["metric"],
        stop_at_metric=warm["stop_at_metric"],
    )
    train(model, train_ds, dev_ds, warm_tc)
    return model


def evaluate_model(model: EncoderModel, dataset: Dataset) -> dict:
    records = collect_predictions(model, dataset)
    predicted = [r.predicted for r in records]
    labels = [r.label for r in records]
    macro_p, macro_r = macro_precision_recall(predicted, labels, dataset.n_classes)
    report = ece(records, n_bins=10)
    return {
        "accuracy": accuracy(predicted, labels),
        "f1_micro": f1_micro(predicted, labels, dataset.n_classes),
        "macro_precision": macro_p,
        "macro_recall": macro_r,
        "ece": report.ece,
        "n_examples": len(records),
    }, report


def _parameter_summary(cfg: dict, model: EncoderModel) -> dict:
    part = partition_parameters(model)
    mc = cfg["model"]
    per_layer = mc["prefix_len"] * mc["d_model"]
    prop_count = mc["n_layers"] * per_layer
    tuning_count = 2 * prop_count
    return {
        "trainable_total": part.trainable_total,
        "frozen_total": part.frozen_total,
        "trainable_fraction": part.trainable_fraction,
        "prefix_params": model.bank.trainable_count() if model.bank else 0,
        "prefix_params_propagation": prop_count,
        "prefix_params_prefix_tuning": tuning_count,
        "propagation_to_tuning_ratio": prop_count / tuning_count if tuning_count else None,
    }


def run_experiment(cfg: dict) -> dict:
    """Train/evaluate each seed and write all result artifacts.

    Layout: ``<outdir>/<mode>/<seed>/metrics.jsonl`` (per-epoch entries
    plus one final test entry), ``model.ckpt``, ``reliability.csv`` and a
    cross-seed ``<outdir>/summary.json``.
    """
    mode = cfg["mode"]
    outdir = Path(cfg["outdir"])
    train_ds, dev_ds, test_ds = build_datasets(cfg["task"])
    warm_model = None
    if mode != "fine_tuning" and cfg["warm"]["epochs"] > 0:
        warm_model = _warm_backbone(cfg, train_ds, dev_ds)

    per_seed = {}
    param_summary = None
    for seed in cfg["seeds"]:
        if mode == "fine_tuning":
            model = _new_model(cfg, train_ds.vocab_size, train_ds.n_classes, mode, seed)
        elif warm_model is not None:
            model = derive_tuning_model(
                warm_model, mode, cfg["model"]["prefix_len"], seed, alpha=cfg["alpha"]
            )
        else:
            model = _new_model(cfg, train_ds.vocab_size, train_ds.n_classes, mode, seed)
        result = train(model, train_ds, dev_ds, _train_config(cfg, seed, mode))
        metrics, report = evaluate_model(model, test_ds)
        if param_summary is None:
            param_summary = _parameter_summary(cfg, model)

        seed_dir = outdir / mode / str(seed)
        seed_dir.mkdir(parents=True, exist_ok=True)
        with open(seed_dir / "metrics.jsonl", "w", encoding="utf-8") as fh:
            for entry in result.log:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
            final = {"type": "test", "seed": seed, "mode": mode, "best_epoch": result.best_epoch}
            final.update({f"test_{k}": v for k, v in metrics.items()})
            fh.write(json.dumps(final, sort_keys=True) + "\n")
        write_reliability_csv(report, seed_dir / "reliability.csv")
        save_checkpoint(model, seed_dir / "model.ckpt")
        per_seed[str(seed)] = metrics

    metric_names = ("accuracy", "f1_micro", "macro_precision", "macro_recall", "ece")
    aggregate = {}
    for name in metric_names:
        values = [per_seed[str(s)][name] for s in cfg["seeds"]]
        aggregate[name] = {
            "mean": statistics.fmean(values),
            "std": statistics.pstdev(values) if len(values) > 1 else 0.0,
        }
    summary = {
        "mode": mode,
        "seeds": list(cfg["seeds"]),
        "per_seed": per_seed,
        "aggregate": aggregate,
        "parameters": param_summary,
        "config": cfg,
    }
    outdir.mkdir(parents=True, exist_ok=True)
    summary_path = outdir / "summary.json"
    existing = {}
    if summary_path.exists():
        with open(summary_path, encoding="utf-8") as fh:
            existing = json.load(fh)
    existing[mode] = summary
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(existing, fh, sort_keys=True, indent=2)
    return summary


# ---------------------------------------------------------------------------
# kernel-identity verification
# ---------------------------------------------------------------------------


@dataclass
class VerifyReport:
    trials: int
    tol: float
    max_err: float
    worst_trial: dict | None

    @property
    def passed(self) -> bool:
        return self.max_err < self.tol


def verify_kernel(trials: int = 100, seed: int = 0, tol: float = 1e-10) -> VerifyReport:
    """Check the two-module decomposition against full attention.

    Random geometries (prefix length 1..4, sequence length 2..16, widths
    {4, 8, 16}, 1 or 2 heads), random normal weights, float64, dense mask.
    The decomposition route (separately normalized modules recombined with
    the per-query lambda) must match the single-softmax route elementwise.
    """
    rng = np.random.default_rng(seed)
    max_err = 0.0
    worst = None
    for trial in range(trials):
        d = int(rng.choice([4, 8, 16]))
        heads = int(rng.choice([1, 2]))
        j = int(rng.integers(1, 5))
        m = int(rng.integers(2, 17))
        cfg = AttentionConfig(d_model=d, n_heads=heads, prefix_len=j, window="full")
        zeros = lambda *s: Tensor(np.zeros(s))
        w = LayerWeights(
            w_q=Tensor(rng.normal(size=(d, d))),
            w_k=Tensor(rng.normal(size=(d, d))),
            w_v=Tensor(rng.normal(size=(d, d))),
            w_o=Tensor(rng.normal(size=(d, d))),
            w_ff1=zeros(d, d), b_ff1=zeros(1, d), w_ff2=zeros(d, d), b_ff2=zeros(1, d),
            ln1_gamma=zeros(1, d), ln1_beta=zeros(1, d),
            ln2_gamma=zeros(1, d), ln2_beta=zeros(1, d),
        )
        d_in = concat_rows(
            [Tensor(rng.normal(size=(j, d))), Tensor(rng.normal(size=(m, d)))]
        )
        mask = build_mask(cfg, m)
        with no_grad():
            left = kernel_decomposed_attention(cfg, d_in, w, "exact", mask)
            right = prefix_propagation_attention(cfg, d_in, w, mask)
        err = float(np.abs(left.data - right.data).max())
        if err > max_err:
            max_err = err
            worst = {"trial": trial, "d_model": d, "n_heads": heads, "prefix_len": j, "seq_len": m}
    return VerifyReport(trials=trials, tol=tol, max_err=max_err, worst_trial=worst)


# ---------------------------------------------------------------------------
# benchmarks
# ---------------------------------------------------------------------------


def bench_inference(cfg: dict, repeats: int = 9, n_inputs: int = 8, seed: int = 0) -> dict:
    """Median inference wall-time per tuning mode over identical inputs.

    All modes share one backbone; prefix modes use the same prefix length.
    Runs are serial; the report carries the propagation/tuning ratio.
    """
    if repeats < 5:
        raise ConfigError(f"bench needs repeats >= 5, got {repeats}")
    mc = cfg["model"]
    task = cfg["task"]
    seq_len = task["seq_len"]
    vocab_size = 1 + task["n_classes"] + task["n_filler"]
    base = _new_model(cfg, vocab_size, task["n_classes"], "fine_tuning", seed)
    models = {
        "standard": base,
        "prefix_tuning": derive_tuning_model(base, "prefix_tuning", mc["prefix_len"], seed + 1),
        "prefix_propagation": derive_tuning_model(
            base, "prefix_propagation", mc["prefix_len"], seed + 2
        ),
    }
    rng = np.random.default_rng(seed)
    inputs = [
        np.concatenate(([0], rng.integers(1, vocab_size, size=seq_len - 1)))
        for _ in range(n_inputs)
    ]
    report = {"seq_len": seq_len, "prefix_len": mc["prefix_len"], "repeats": repeats,
              "n_inputs": n_inputs, "modes": {}}
    for name, model in models.items():
        for tokens in inputs:  # warmup and mask-cache fill
            model.logits(tokens)
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            for tokens in inputs:
                model.logits(tokens)
            times.append(time.perf_counter() - t0)
        times.sort()
        median = statistics.median(times)
        report["modes"][name] = {
            "median_s": median,
            "p25_s": times[len(times) // 4],
            "p75_s": times[(3 * len(times)) // 4],
            "per_example_ms": 1000.0 * median / n_inputs,
        }
    report["ratio_propagation_tuning"] = (
        report["modes"]["prefix_propagation"]["median_s"]
        / report["modes"]["prefix_tuning"]["median_s"]
    )
    return report


def bench_kernels(rows: int = 1056, cols: int = 264, repeats: int = 20) -> dict:
    """Compare the compiled and python kernel backends on the hot shapes."""
    from .kernels import _pykernels

    try:
        from .kernels import _ckernels
    except ImportError:
        _ckernels = None
    rng = np.random.default_rng(0)
    scores = rng.normal(size=(rows, cols))
    mask = rng.random((rows, cols)) < 0.3
    mask[:, 0] = True
    x = rng.normal(size=(cols, 256))
    gamma, beta = np.ones(256), np.zeros(256)
    backends = {"python": _pykernels}
    if _ckernels is not None:
        backends["compiled"] = _ckernels

    def timeit(fn):
        times = []
        fn()
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            times.append(time.perf_counter() - t0)
        return statistics.median(times)

    report = {"active_backend": kernels.BACKEND, "rows": rows, "cols": cols, "ops": {}}
    for op, make in {
        "softmax_masked": lambda mod: (lambda: mod.softmax_forward(scores, mask)),
        "softmax_full": lambda mod: (lambda: mod.softmax_forward(scores)),
        "layer_norm": lambda mod: (lambda: mod.layer_norm_forward(x, gamma, beta, 1e-5)),
    }.items():
        entry = {name: timeit(make(mod)) for name, mod in backends.items()}
        if "compiled" in entry:
            entry["speedup"] = entry["python"] / entry["compiled"]
        report["ops"][op] = entry
    return report


# ---------------------------------------------------------------------------
# click wiring
# ---------------------------------------------------------------------------


@click.group()
def cli():
    """Prefix-propagation experiment driver."""


_config_options = [
    click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                 default=None, help="JSON experiment config."),
    click.option("--set", "sets", multiple=True, metavar="KEY.PATH=VALUE",
                 help="Override a config field (JSON-parsed value)."),
]


def _with_config_options(fn):
    for opt in reversed(_config_options):
        fn = opt(fn)
    return fn


@cli.command("train")
@_with_config_options
def train_cmd(config_path, sets):
    """Run the experiment described by the config over its seeds."""
    cfg = load_config(config_path, sets)
    summary = run_experiment(cfg)
    agg = summary["aggregate"]
    click.echo(f"mode={summary['mode']} seeds={summary['seeds']}")
    for name, stats in agg.items():
        click.echo(f"  {name}: mean={stats['mean']:.4f} std={stats['std']:.4f}")
    click.echo(f"results in {cfg['outdir']}")


@cli.command("eval")
@click.option("--ckpt", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--split", default="test", type=click.Choice(["train", "dev", "test"]))
@_with_config_options
def eval_cmd(ckpt, split, config_path, sets):
    """Evaluate a saved checkpoint on a task split."""
    cfg = load_config(config_path, sets)
    model = load_checkpoint(ckpt)
    datasets = dict(zip(("train", "dev", "test"), build_datasets(cfg["task"])))
    metrics, _ = evaluate_model(model, datasets[split])
    click.echo(json.dumps({"split": split, **metrics}, sort_keys=True, indent=2))


@cli.command("verify-kernel")
@click.option("--trials", default=100, show_default=True)
@click.option("--seed", default=None, type=int, help="Default: PREFIXPROP_SEED or 0.")
@click.option("--tol", default=1e-10, show_default=True)
def verify_cmd(trials, seed, tol):
    """Verify the kernel decomposition identity on random configurations."""
    if seed is None:
        seed = int(os.environ.get("PREFIXPROP_SEED", "0"))
    report = verify_kernel(trials=trials, seed=seed, tol=tol)
    click.echo(json.dumps({
        "trials": report.trials,
        "tol": report.tol,
        "max_err": report.max_err,
        "worst_trial": report.worst_trial,
        "passed": report.passed,
    }, sort_keys=True))
    if not report.passed:
        raise VerificationError(
            f"decomposition error {report.max_err:.3e} exceeds tolerance {report.tol:.3e}"
        )


@cli.command("bench")
@click.option("--repeats", default=9, show_default=True)
@click.option("--n-inputs", default=8, show_default=True)
@click.option("--seed", default=None, type=int)
@click.option("--out", default=None, type=click.Path(dir_okay=False))
@_with_config_options
def bench_cmd(repeats, n_inputs, seed, out, config_path, sets):
    """Time inference for standard / prefix-tuning / prefix-propagation."""
    cfg = load_config(config_path, sets)
    if seed is None:
        seed = int(os.environ.get("PREFIXPROP_SEED", "0"))
    report = bench_inference(cfg, repeats=repeats, n_inputs=n_inputs, seed=seed)
    text = json.dumps(report, sort_keys=True, indent=2)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    click.echo(text)


@cli.command("bench-kernels")
@click.option("--rows", default=1056, show_default=True)
@click.option("--cols", default=264, show_default=True)
@click.option("--repeats", default=20, show_default=True)
def bench_kernels_cmd(rows, cols, repeats):
    """Compare the compiled kernel extension against the numpy fallback."""
    click.echo(json.dumps(bench_kernels(rows, cols, repeats), sort_keys=True, indent=2))


@cli.command("report")
@click.option("--outdir", required=True, type=click.Path(exists=True, file_okay=False))
def report_cmd(outdir):
    """Print a summary table from an experiment output directory."""
    outdir = Path(outdir)
    rows = []
    for metrics_file in sorted(outdir.glob("*/*/metrics.jsonl")):
        mode, seed = metrics_file.parent.parent.name, metrics_file.parent.name
        with open(metrics_file, encoding="utf-8") as fh:
            entries = [json.loads(line) for line in fh if line.strip()]
        test = next((e for e in entries if e.get("type") == "test"), None)
        if test:
            rows.append((mode, seed, test))
    if not rows:
        raise ConfigError(f"no metrics.jsonl files under {outdir}")
    header = f"{'mode':<20} {'seed':>4} {'acc':>7} {'f1':>7} {'macroP':>7} {'macroR':>7} {'ece':>7}"
    click.echo(header)
    click.echo("-" * len(header))
    for mode, seed, test in rows:
        click.echo(
            f"{mode:<20} {seed:>4} {test['test_accuracy']:>7.4f} {test['test_f1_micro']:>7.4f} "
            f"{test['test_macro_precision']:>7.4f} {test['test_macro_recall']:>7.4f} "
            f"{test['test_ece']:>7.4f}"
        )


@cli.command("gen-data")
@click.option("--generator", type=click.Choice(sorted(GENERATORS)), default="needle")
@click.option("--seq-len", default=256, show_default=True)
@click.option("--n-classes", default=4, show_default=True)
@click.option("--n", default=1000, show_default=True)
@click.option("--seed", default=None, type=int)
@click.option("--split", default="train", type=click.Choice(["train", "dev", "test"]))
@click.option("--window", default=32, show_default=True, help="needle only")
@click.option("--n-filler", default=8, show_default=True, help="needle only")
@click.option("--bias", default=0.5, show_default=True, help="majority only")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def gen_data_cmd(generator, seq_len, n_classes, n, seed, split, window, n_filler, bias, out):
    """Export a synthetic dataset as JSON Lines."""
    if seed is None:
        seed = int(os.environ.get("PREFIXPROP_SEED", "0"))
    if generator == "needle":
        ds = GENERATORS[generator](
            seq_len, n_classes, n, seed, window=window, n_filler=n_filler, split=split
        )
    else:
        ds = GENERATORS[generator](seq_len, n_classes, n, seed, bias=bias, split=split)
    write_jsonl(ds, out)
    click.echo(f"wrote {len(ds)} examples to {out}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except (click.UsageError, click.ClickException) as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return 1
    except VerificationError as exc:
        click.echo(f"verification failure: {exc}", err=True)
        return 2
    except DivergenceError as exc:
        click.echo(f"training divergence: {exc}", err=True)
        return 3
    except PrefixPropError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
