"""Downstream evaluation: linear probing and full fine-tuning.

The dataset is split 80/20 stratified; the probe trains on a configurable
fraction of the train side (three disjoint-as-possible resamples when the
fraction is below 1) and reports per-run accuracies next to their mean.
The optimizer defaults to Adam with lr 3e-4 and weight decay 1e-4.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .archive import read_archive
from .autodiff import Tape, Tensor, gather_pairs, linear, log_softmax, neg, tmean
from .datasets import Dataset, split_fraction, train_test_split
from .model import Model, ModelSpec, encode, load_model
from .optim import make_optimizer
from .pretrain import OptimizerConfig

__all__ = [
    "ProbeConfig",
    "AccuracyReport",
    "evaluate",
    "compare_runs",
    "comparison_to_csv",
    "load_report",
]


@dataclass(frozen=True)
class ProbeConfig:
    mode: str = "finetune"  # finetune | linear
    epochs: int = 20
    batch_size: int = 64
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    fraction: float = 1.0
    n_runs: int | None = None  # defaults to 3 when fraction < 1, else 1
    seed: int = 0
    split_seed: int = 0
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.mode not in ("finetune", "linear"):
            raise ValueError(f"mode must be finetune or linear, got {self.mode!r}")
        if not 0 < self.fraction <= 1:
            raise ValueError(f"fraction must lie in (0,1], got {self.fraction}")
        if self.n_runs is not None and self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    def resolved_runs(self) -> int:
        if self.fraction == 1.0:
            return 1  # full data leaves nothing to resample
        return self.n_runs if self.n_runs is not None else 3


@dataclass
class AccuracyReport:
    dataset: str
    mode: str
    fraction: float
    runs: list
    mean: float
    label: str = ""
    method: str = ""
    init: str = ""
    surgery: str = ""

    def to_dict(self):
        return {
            "dataset": self.dataset,
            "mode": self.mode,
            "fraction": self.fraction,
            "runs": self.runs,
            "mean": self.mean,
            "label": self.label,
            "method": self.method,
            "init": self.init,
            "surgery": self.surgery,
        }

    def to_csv(self) -> str:
        """One row per probe run: method,init,surgery,fraction,run,accuracy."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["method", "init", "surgery", "fraction", "run", "accuracy"])
        for run, acc in enumerate(self.runs):
            writer.writerow(
                [self.method, self.init, self.surgery, self.fraction, run, f"{acc:.6f}"]
            )
        return buf.getvalue()

    def write(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))
        Path(path).with_suffix(".csv").write_text(self.to_csv())


def load_report(path) -> AccuracyReport:
    d = json.loads(Path(path).read_text())
    return AccuracyReport(**d)


def _dataset_fingerprint(dataset: Dataset) -> str:
    img = dataset.images
    return (
        f"n={len(dataset)},classes={dataset.n_classes},"
        f"hw={img.shape[2]}x{img.shape[3]},sum={float(img.sum()):.4f}"
    )


def _resolve_model(checkpoint) -> Model:
    if isinstance(checkpoint, Model):
        return checkpoint.copy()
    if isinstance(checkpoint, (str, Path)):
        tensors = read_archive(checkpoint)
    elif isinstance(checkpoint, dict):
        tensors = checkpoint
    else:
        raise TypeError(f"cannot interpret checkpoint of type {type(checkpoint)!r}")
    n_blocks = len({k.split(".")[0] for k in tensors if k.startswith("block")})
    if not n_blocks:
        raise ValueError("checkpoint holds no block tensors")
    widths = tuple(tensors[f"block{i}.conv.weight"].shape[0] for i in range(n_blocks))
    return load_model(ModelSpec(blocks=widths), tensors)


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i : i + batch_size]


def _train_classifier(features, labels, n_classes, config: ProbeConfig, seed):
    """Multinomial logistic regression on fixed features via the autodiff core."""
    rng = np.random.default_rng(seed)
    d = features.shape[1]
    w = Tensor((rng.normal(0.0, 0.01, size=(d, n_classes))).astype(np.float32))
    b = Tensor(np.zeros(n_classes, dtype=np.float32))
    params = {"probe.weight": w, "probe.bias": b}
    opt = make_optimizer(
        kind=config.optimizer.kind,
        lr=config.optimizer.lr,
        weight_decay=config.optimizer.weight_decay,
        momentum=config.optimizer.momentum,
    )
    for epoch in range(config.epochs):
        for batch in _batches(len(labels), config.batch_size, rng):
            with Tape() as tape:
                logits = linear(Tensor(features[batch]), w, b)
                logp = log_softmax(logits, axis=1)
                picked = gather_pairs(logp, np.arange(len(batch)), labels[batch])
                loss = neg(tmean(picked))
                grads = tape.backward(loss)
            opt.step(params, {k: grads.of(p) for k, p in params.items()})
    return w, b


def _encode_all(model: Model, images, batch_size=128) -> np.ndarray:
    feats = []
    for i in range(0, len(images), batch_size):
        feats.append(encode(model, images[i : i + batch_size], mode="eval").data)
    return np.concatenate(feats)


def _linear_run(model, dataset, train_idx, test_idx, config, seed):
    feats_train = _encode_all(model, dataset.images[train_idx])
    feats_test = _encode_all(model, dataset.images[test_idx])
    w, b = _train_classifier(
        feats_train, dataset.labels[train_idx], dataset.n_classes, config, seed
    )
    logits = feats_test @ w.data + b.data
    return float(np.mean(logits.argmax(axis=1) == dataset.labels[test_idx]))


def _finetune_run(model, dataset, train_idx, test_idx, config, seed):
    model = model.copy()
    rng = np.random.default_rng(seed)
    d = model.spec.feature_dim
    n_classes = dataset.n_classes
    w = Tensor((rng.normal(0.0, 0.01, size=(d, n_classes))).astype(np.float32))
    b = Tensor(np.zeros(n_classes, dtype=np.float32))
    params = dict(model.parameters())
    params.update({"probe.weight": w, "probe.bias": b})
    opt = make_optimizer(
        kind=config.optimizer.kind,
        lr=config.optimizer.lr,
        weight_decay=config.optimizer.weight_decay,
        momentum=config.optimizer.momentum,
    )
    images = dataset.images[train_idx]
    labels = dataset.labels[train_idx]
    for epoch in range(config.epochs):
        for batch in _batches(len(labels), config.batch_size, rng):
            with Tape() as tape:
                feats = encode(model, images[batch], mode="train")
                logits = linear(feats, w, b)
                logp = log_softmax(logits, axis=1)
                picked = gather_pairs(logp, np.arange(len(batch)), labels[batch])
                loss = neg(tmean(picked))
                grads = tape.backward(loss)
            opt.step(params, {k: grads.of(p) for k, p in params.items()})
    feats_test = _encode_all(model, dataset.images[test_idx])
    logits = feats_test @ w.data + b.data
    return float(np.mean(logits.argmax(axis=1) == dataset.labels[test_idx]))


def evaluate(
    checkpoint,
    dataset: Dataset,
    config: ProbeConfig,
    label="",
    method="",
    init="",
    surgery="",
) -> AccuracyReport:
    """Probe a checkpoint (path, tensor dict, or Model) on a labeled dataset.

    ``method``/``init``/``surgery`` are provenance labels carried into the
    report schema; they do not affect the computation.
    """
    if dataset.labels.min() < 0:
        raise ValueError("labels must be non-negative class indices")
    if dataset.n_classes < 2:
        raise ValueError("need at least 2 classes to measure accuracy")
    counts = np.bincount(dataset.labels, minlength=dataset.n_classes)
    if np.any(counts == 0):
        raise ValueError("every class index up to max(labels) needs samples")
    base_model = _resolve_model(checkpoint)
    train_idx, test_idx = train_test_split(
        dataset.labels, test_fraction=config.test_fraction, seed=config.split_seed
    )
    run_fn = _linear_run if config.mode == "linear" else _finetune_run
    accuracies = []
    for run in range(config.resolved_runs()):
        sub = split_fraction(
            dataset.labels[train_idx], config.fraction, run_index=run, seed=config.seed
        )
        acc = run_fn(
            base_model, dataset, train_idx[sub], test_idx, config,
            seed=config.seed + 1000 * run + 7,
        )
        accuracies.append(acc)
    return AccuracyReport(
        dataset=_dataset_fingerprint(dataset),
        mode=config.mode,
        fraction=config.fraction,
        runs=accuracies,
        mean=float(np.mean(accuracies)),
        label=label,
        method=method,
        init=init,
        surgery=surgery,
    )


def compare_runs(reports, baseline_index: int = 0):
    """Absolute accuracies and deltas versus a baseline report.

    Positive delta means the variant improved on the baseline. All reports
    must describe the same dataset.
    """
    reports = list(reports)
    if len(reports) < 2:
        raise ValueError("need at least 2 reports to compare")
    fingerprints = {r.dataset for r in reports}
    if len(fingerprints) != 1:
        raise ValueError(f"reports describe different datasets: {sorted(fingerprints)}")
    base = reports[baseline_index]
    rows = []
    for r in reports:
        rows.append(
            {
                "label": r.label,
                "mode": r.mode,
                "fraction": r.fraction,
                "runs": r.runs,
                "accuracy": r.mean,
                "delta": r.mean - base.mean,
            }
        )
    return rows


def comparison_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["label", "mode", "fraction", "accuracy", "delta"])
    for row in rows:
        writer.writerow(
            [row["label"], row["mode"], row["fraction"],
             f"{row['accuracy']:.4f}", f"{row['delta']:+.4f}"]
        )
    return buf.getvalue()
