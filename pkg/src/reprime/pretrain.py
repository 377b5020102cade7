"""Pretraining harness: one-step (from scratch) and two-step (from a
checkpoint, optionally after surgery) self-supervised runs.

An epoch is a fixed number of iterations, not a pass over the data, so
datasets of different sizes compare fairly. Checkpoints are saved at 10%,
30%, 60% and 100% of the epoch budget. Runs are bit-deterministic given the
seed; a non-finite loss aborts with a DivergenceError rather than clamping.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import archive
from .augment import AugmentPolicy, augment_view, default_local_policy
from .autodiff import Tape, no_grad, slice_rows
from .contrastive import (
    PredictionHead,
    PrototypeBank,
    ProjectionHead,
    TargetNetwork,
    block_pairing,
    byol_loss,
    ema_update,
    nt_xent_loss,
    swav_loss,
)
from .datasets import Dataset
from .model import Model, ModelSpec, build_model, encode, load_model
from .optim import make_optimizer
from .surgery import surgery_pipeline

__all__ = [
    "OptimizerConfig",
    "SurgeryOptions",
    "PretrainConfig",
    "RunMetrics",
    "DivergenceError",
    "checkpoint_schedule",
    "run_pretrain",
]

METHODS = ("simclr", "swav", "byol")


class DivergenceError(RuntimeError):
    """Raised when the pretraining loss stops being finite."""


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 3e-4
    weight_decay: float = 1e-4
    momentum: float = 0.9


@dataclass(frozen=True)
class SurgeryOptions:
    mode: str = "off"  # off | paper | exact
    strategy: str = "copy"
    threshold: float = 0.1

    def __post_init__(self):
        if self.mode not in ("off", "paper", "exact"):
            raise ValueError(f"surgery mode must be off/paper/exact, got {self.mode!r}")


@dataclass(frozen=True)
class PretrainConfig:
    method: str = "simclr"
    init: str = "random"  # "random" or a checkpoint path
    surgery: SurgeryOptions = field(default_factory=SurgeryOptions)
    epochs: int = 30
    iterations: int = 50  # per epoch
    batch_size: int = 32
    crop_size: int = 32
    blocks: tuple = (16, 32, 64, 128)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    temperature: float = 0.5
    swav_temperature: float = 0.1
    sinkhorn_iters: int = 3
    sinkhorn_sharpen: float = 0.05
    n_prototypes: int = 16
    byol_momentum: float = 0.99
    d_proj: int = 32
    n_local_crops: int = 0
    crop_scale: tuple = (0.3, 1.0)
    seed: int = 0
    out_dir: str | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.epochs < 0 or self.iterations <= 0 or self.batch_size < 4:
            raise ValueError("epochs >= 0, iterations >= 1 and batch_size >= 4 required")
        if self.init != "random" and not Path(self.init).exists():
            raise FileNotFoundError(f"init checkpoint not found: {self.init}")
        if self.n_local_crops and self.method != "swav":
            raise ValueError("local crops are only consumed by swav")

    def model_spec(self) -> ModelSpec:
        return ModelSpec(blocks=tuple(self.blocks))

    def policy(self) -> AugmentPolicy:
        return AugmentPolicy(out_size=self.crop_size, crop_scale=tuple(self.crop_scale))


@dataclass
class EpochMetric:
    epoch: int
    loss: float
    seconds: float


@dataclass
class RunMetrics:
    epochs: list = field(default_factory=list)
    checkpoints: dict = field(default_factory=dict)  # epoch -> path
    probe_accuracy: dict = field(default_factory=dict)  # epoch -> accuracy, optional
    final_checkpoint: str | None = None
    heads_checkpoint: str | None = None

    @property
    def losses(self):
        return [m.loss for m in self.epochs]

    def to_dict(self):
        return {
            "epochs": [asdict(m) for m in self.epochs],
            "checkpoints": {str(k): v for k, v in self.checkpoints.items()},
            "probe_accuracy": {str(k): v for k, v in self.probe_accuracy.items()},
            "final_checkpoint": self.final_checkpoint,
            "heads_checkpoint": self.heads_checkpoint,
        }

    def write(self, out_dir):
        out = Path(out_dir)
        with open(out / "metrics.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "loss", "seconds"])
            for m in self.epochs:
                writer.writerow([m.epoch, repr(m.loss), f"{m.seconds:.3f}"])
        with open(out / "summary.json", "w") as f:
            json.dump(self.to_dict(), f, indent=2)


def checkpoint_schedule(epochs: int):
    """Epochs at 10/30/60/100% of the budget, rounded up, deduplicated."""
    if epochs <= 0:
        return []
    marks = sorted({int(np.ceil(epochs * frac)) for frac in (0.1, 0.3, 0.6, 1.0)})
    return [m for m in marks if m >= 1]


def _init_model(config: PretrainConfig):
    spec = config.model_spec()
    if config.init == "random":
        state = build_model(spec, config.seed).state()
    else:
        state = archive.read_archive(config.init)
    if config.surgery.mode != "off":
        state, report = surgery_pipeline(
            state,
            strategy=config.surgery.strategy,
            threshold=config.surgery.threshold,
            eps_mode="exact" if config.surgery.mode == "exact" else "paper",
            seed=config.seed,
        )
    else:
        report = None
    return load_model(spec, state), report


def _sample_batch(dataset: Dataset, config: PretrainConfig, epoch: int, it: int):
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, epoch, it)))
    idx = rng.integers(0, len(dataset), size=config.batch_size)
    base = np.random.SeedSequence((config.seed, epoch, it, 1))
    streams = base.spawn(config.batch_size)
    return idx, [np.random.default_rng(s) for s in streams]


def _two_views(dataset, idx, streams, policy):
    views_a, views_b = [], []
    for i, stream in zip(idx, streams):
        a, b = stream.spawn(2)
        views_a.append(augment_view(dataset.images[i], policy, np.random.default_rng(a)))
        views_b.append(augment_view(dataset.images[i], policy, np.random.default_rng(b)))
    return np.stack(views_a), np.stack(views_b)


def _local_views(dataset, idx, streams, policy, n_local):
    locals_ = [[] for _ in range(n_local)]
    for i, stream in zip(idx, streams):
        children = stream.spawn(n_local)
        for v, child in enumerate(children):
            locals_[v].append(augment_view(dataset.images[i], policy, np.random.default_rng(child)))
    return [np.stack(v) for v in locals_]


def run_pretrain(config: PretrainConfig, dataset: Dataset):
    """Execute one pretraining run; returns (Model, RunMetrics).

    With an out_dir set, writes scheduled checkpoints, the final encoder
    checkpoint, a separate heads archive (projection head, and the predictor
    or prototypes when the method uses them), metrics.csv and summary.json.
    """
    model, surgery_report = _init_model(config)
    n = config.batch_size
    policy = config.policy()

    projection = ProjectionHead.build(model.spec.feature_dim, d_proj=config.d_proj,
                                      seed=config.seed + 101)
    params = dict(model.parameters())
    params.update(projection.parameters())

    predictor = None
    prototypes = None
    target = None
    local_policy = None
    if config.method == "byol":
        predictor = PredictionHead.build(config.d_proj, seed=config.seed + 202)
        params.update(predictor.parameters())
        target = TargetNetwork.from_online(model, projection, momentum=config.byol_momentum)
    elif config.method == "swav":
        prototypes = PrototypeBank.build(config.n_prototypes, config.d_proj,
                                         seed=config.seed + 303)
        params.update(prototypes.parameters())
        local_policy = default_local_policy(policy)

    opt = make_optimizer(
        kind=config.optimizer.kind,
        lr=config.optimizer.lr,
        weight_decay=config.optimizer.weight_decay,
        momentum=config.optimizer.momentum,
    )

    out_dir = Path(config.out_dir) if config.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        if surgery_report is not None:
            (out_dir / "surgery_report.json").write_text(surgery_report.to_json())

    metrics = RunMetrics()
    schedule = set(checkpoint_schedule(config.epochs))
    pairing = block_pairing(2 * n)

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        epoch_losses = []
        for it in range(config.iterations):
            idx, streams = _sample_batch(dataset, config, epoch, it)
            views_a, views_b = _two_views(dataset, idx, streams, policy)
            both = np.concatenate([views_a, views_b])

            with Tape() as tape:
                if config.method == "simclr":
                    feats = encode(model, both, mode="train")
                    z = projection(feats)
                    loss = nt_xent_loss(z, pairing=pairing, temperature=config.temperature)
                elif config.method == "swav":
                    feats = encode(model, both, mode="train")
                    z = projection(feats)
                    views = [slice_rows(z, 0, n), slice_rows(z, n, 2 * n)]
                    if config.n_local_crops:
                        local_batches = _local_views(
                            dataset, idx, streams, local_policy, config.n_local_crops
                        )
                        for lb in local_batches:
                            views.append(projection(encode(model, lb, mode="train")))
                    loss = swav_loss(
                        views,
                        prototypes,
                        temperature=config.swav_temperature,
                        sinkhorn_iters=config.sinkhorn_iters,
                        sinkhorn_sharpen=config.sinkhorn_sharpen,
                    )
                else:  # byol
                    feats = encode(model, both, mode="train")
                    online_proj = projection(feats)
                    with no_grad():
                        swapped = np.concatenate([views_b, views_a])
                        tfeats = encode(target.model, swapped, mode="train", update_stats=False)
                        target_proj = target.projection(tfeats).detach()
                    loss = byol_loss(online_proj, target_proj, predictor)

                value = loss.item()
                if not np.isfinite(value):
                    raise DivergenceError(
                        f"non-finite loss {value} at epoch {epoch} iteration {it} "
                        f"(method={config.method}, lr={config.optimizer.lr})"
                    )
                grads = tape.backward(loss)

            opt.step(params, {name: grads.of(p) for name, p in params.items()})
            if config.method == "byol":
                ema_update(target, _online_tensors(model, projection))
            elif config.method == "swav":
                prototypes.renormalize()
            epoch_losses.append(value)

        metrics.epochs.append(
            EpochMetric(epoch, float(np.mean(epoch_losses)), time.perf_counter() - t0)
        )
        if out_dir and epoch in schedule:
            path = str(out_dir / f"ckpt_epoch_{epoch:04d}.rpa")
            archive.write_archive(model.state(), path)
            metrics.checkpoints[epoch] = path

    if out_dir:
        final = str(out_dir / "checkpoint.rpa")
        archive.write_archive(model.state(), final)
        metrics.final_checkpoint = final
        heads = dict(projection.parameters())
        if predictor is not None:
            heads.update(predictor.parameters())
        if prototypes is not None:
            heads.update(prototypes.parameters())
        heads_path = str(out_dir / "heads.rpa")
        archive.write_archive({k: v.data for k, v in heads.items()}, heads_path)
        metrics.heads_checkpoint = heads_path
        metrics.write(out_dir)
    return model, metrics


def _online_tensors(model: Model, projection: ProjectionHead) -> dict:
    out = dict(model.parameters())
    for i, bn in enumerate(model.bns):
        out[f"block{i}.bn.running_mean"] = bn.running_mean
        out[f"block{i}.bn.running_var"] = bn.running_var
    out.update(projection.parameters())
    return out
