"""Checkpoint weight surgery: Frobenius-norm scaling and dead-filter repair.

A layer here means one conv weight plus its batch-norm parameters. When the
layer's Frobenius norm s (over the conv weight only) exceeds 1, weights and
running mean are divided by sqrt(s), the running variance by s^2, gamma by
sqrt(s), and beta stays put; with self-consistent running statistics the
eval-mode batch-norm output is preserved up to the eps term. "Exact" mode
additionally divides eps by s^2, making the preservation exact. Dead filters
(per-filter norm below a threshold) can be left alone, redrawn, or replaced
by copies of live filters from the same layer; repair runs before scaling so
the threshold applies to the original weight magnitudes.
"""

from __future__ import annotations

import io
import csv
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .model import he_std

__all__ = [
    "LayerGroup",
    "FilterRepair",
    "LayerReport",
    "SurgeryReport",
    "layer_frobenius_norm",
    "filter_norms",
    "scale_layer",
    "repair_dead_filters",
    "group_layers",
    "surgery_pipeline",
    "weight_distribution_summary",
    "summary_to_csv",
    "SUMMARY_COLUMNS",
]

DEAD_FILTER_THRESHOLD = 0.1
STRATEGIES = ("baseline", "random", "copy")
EPS_MODES = ("paper", "exact")


@dataclass
class LayerGroup:
    """One conv weight [K,C,kh,kw] with its per-channel batch-norm state."""

    name: str
    weight: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        k = self.weight.shape[0]
        for nm in ("gamma", "beta", "running_mean", "running_var"):
            arr = getattr(self, nm)
            if arr.shape != (k,):
                raise ValueError(f"{self.name}: {nm} has shape {arr.shape}, expected ({k},)")
        if self.eps <= 0:
            raise ValueError(f"{self.name}: eps must be positive")
        if np.any(self.running_var < 0):
            raise ValueError(f"{self.name}: running variance must be non-negative")

    def copy(self):
        return LayerGroup(
            self.name,
            self.weight.copy(),
            self.gamma.copy(),
            self.beta.copy(),
            self.running_mean.copy(),
            self.running_var.copy(),
            self.eps,
        )


@dataclass
class FilterRepair:
    index: int
    source: int | None
    strategy: str
    norm_before: float
    norm_after: float


@dataclass
class LayerReport:
    name: str
    frobenius_norm: float
    scaled: bool
    filter_norms_before: list
    filter_norms_after: list
    repairs: list
    threshold: float
    eps_before: float
    eps_after: float


@dataclass
class SurgeryReport:
    strategy: str
    threshold: float
    eps_mode: str
    seed: int
    layers: list = field(default_factory=list)

    @property
    def n_scaled(self):
        return sum(1 for l in self.layers if l.scaled)

    @property
    def n_replaced(self):
        return sum(len([r for r in l.repairs if r.source is not None or r.strategy == "random"]) for l in self.layers)

    def to_dict(self):
        return asdict(self)

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent)


def layer_frobenius_norm(layer: LayerGroup) -> float:
    """sqrt of the sum of squared conv weights; BN parameters excluded."""
    w = layer.weight.astype(np.float64)
    return float(np.sqrt(np.sum(w * w)))


def filter_norms(weight: np.ndarray) -> np.ndarray:
    """Frobenius norm of each output filter's [C,kh,kw] slice."""
    w = weight.astype(np.float64).reshape(weight.shape[0], -1)
    return np.sqrt(np.sum(w * w, axis=1))


def scale_layer(layer: LayerGroup, exact_eps=False) -> LayerGroup:
    """Divide weights/BN state by powers of the layer norm s when s > 1.

    s <= 1 returns a bit-identical copy. Otherwise: weight and running mean
    by sqrt(s), running variance by s^2, gamma by sqrt(s); beta untouched.
    eps is divided by s^2 only when ``exact_eps`` is set.
    """
    s = layer_frobenius_norm(layer)
    if s <= 1.0:
        return layer.copy()
    root = np.float32(np.sqrt(s))
    sq = np.float32(s * s)
    return LayerGroup(
        layer.name,
        layer.weight / root,
        layer.gamma / root,
        layer.beta.copy(),
        layer.running_mean / root,
        layer.running_var / sq,
        layer.eps / float(sq) if exact_eps else layer.eps,
    )


def repair_dead_filters(
    layer: LayerGroup,
    threshold: float = DEAD_FILTER_THRESHOLD,
    strategy: str = "copy",
    seed: int = 0,
):
    """Handle filters whose norm falls below ``threshold``.

    baseline: record them, change nothing. random: redraw them He-normal.
    copy: replace each with a uniformly chosen live filter from this layer
    (error if none exist). BN channel parameters are never touched.
    Returns (new layer, list of FilterRepair records).
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown repair strategy {strategy!r}")
    norms = filter_norms(layer.weight)
    dead = np.flatnonzero(norms < threshold)
    live = np.flatnonzero(norms >= threshold)
    out = layer.copy()
    records = []
    if dead.size == 0:
        return out, records
    if strategy == "baseline":
        for i in dead:
            records.append(FilterRepair(int(i), None, "baseline", float(norms[i]), float(norms[i])))
        return out, records
    rng = np.random.default_rng(seed)
    if strategy == "copy":
        if live.size == 0:
            raise ValueError(f"{layer.name}: no live filters above {threshold} to copy from")
        sources = rng.choice(live, size=dead.size, replace=True)
        for i, src in zip(dead, sources):
            out.weight[i] = layer.weight[src]
            records.append(
                FilterRepair(int(i), int(src), "copy", float(norms[i]), float(norms[src]))
            )
        return out, records
    c, kh, kw = layer.weight.shape[1:]
    std = he_std(c * kh * kw)
    for i in dead:
        fresh = rng.normal(0.0, std, size=(c, kh, kw)).astype(np.float32)
        out.weight[i] = fresh
        after = float(np.sqrt(np.sum(fresh.astype(np.float64) ** 2)))
        records.append(FilterRepair(int(i), None, "random", float(norms[i]), after))
    return out, records


BN_SUFFIXES = ("gamma", "beta", "running_mean", "running_var")


def group_layers(tensors, default_eps=1e-5):
    """Find conv+BN groups by the naming convention.

    Returns (groups sorted by name, passthrough names). A conv weight with a
    partial BN set is a naming violation; a conv with no BN at all passes
    through untouched.
    """
    names = set(tensors)
    groups = []
    grouped_names = set()
    for name in sorted(names):
        if not name.endswith(".conv.weight"):
            continue
        prefix = name[: -len("conv.weight")]
        bn_names = [f"{prefix}bn.{suffix}" for suffix in BN_SUFFIXES]
        present = [n for n in bn_names if n in names]
        if not present:
            continue
        if len(present) != len(bn_names):
            missing = sorted(set(bn_names) - set(present))
            raise ValueError(
                f"naming violation: {name!r} has batch-norm tensors {present} "
                f"but is missing {missing}"
            )
        eps_name = f"{prefix}bn.eps"
        eps = float(tensors[eps_name][0]) if eps_name in names else default_eps
        layer = LayerGroup(
            prefix.rstrip("."),
            np.asarray(tensors[name], dtype=np.float32),
            np.asarray(tensors[bn_names[0]], dtype=np.float32),
            np.asarray(tensors[bn_names[1]], dtype=np.float32),
            np.asarray(tensors[bn_names[2]], dtype=np.float32),
            np.asarray(tensors[bn_names[3]], dtype=np.float32),
            eps,
        )
        groups.append(layer)
        grouped_names.update([name, *bn_names])
        if eps_name in names:
            grouped_names.add(eps_name)
    for name in sorted(names - grouped_names):
        for suffix in BN_SUFFIXES:
            if name.endswith(f".bn.{suffix}"):
                prefix = name[: -len(f"bn.{suffix}")]
                raise ValueError(
                    f"naming violation: {name!r} has no matching {prefix}conv.weight"
                )
    passthrough = sorted(names - grouped_names)
    return groups, passthrough


def surgery_pipeline(
    tensors,
    strategy: str = "copy",
    threshold: float = DEAD_FILTER_THRESHOLD,
    eps_mode: str = "paper",
    seed: int = 0,
    default_eps: float = 1e-5,
):
    """Repair dead filters, then scale every conv+BN group in an archive map.

    Tensors outside any group pass through untouched. Returns the new tensor
    map and a SurgeryReport. In exact eps mode, layers whose eps changed gain
    a ``{layer}.bn.eps`` tensor of shape [1] so the adjustment survives the
    round trip through the archive format.
    """
    if eps_mode not in EPS_MODES:
        raise ValueError(f"eps_mode must be one of {EPS_MODES}, got {eps_mode!r}")
    groups, passthrough = group_layers(tensors, default_eps=default_eps)
    out = {name: np.asarray(tensors[name]) for name in passthrough}
    report = SurgeryReport(strategy=strategy, threshold=threshold, eps_mode=eps_mode, seed=seed)
    for idx, layer in enumerate(groups):
        before = filter_norms(layer.weight)
        repaired, records = repair_dead_filters(
            layer, threshold=threshold, strategy=strategy,
            seed=int(np.random.SeedSequence((seed, idx)).generate_state(1)[0]),
        )
        s = layer_frobenius_norm(repaired)
        scaled = scale_layer(repaired, exact_eps=(eps_mode == "exact"))
        prefix = layer.name
        out[f"{prefix}.conv.weight"] = scaled.weight
        out[f"{prefix}.bn.gamma"] = scaled.gamma
        out[f"{prefix}.bn.beta"] = scaled.beta
        out[f"{prefix}.bn.running_mean"] = scaled.running_mean
        out[f"{prefix}.bn.running_var"] = scaled.running_var
        if scaled.eps != default_eps:
            out[f"{prefix}.bn.eps"] = np.array([scaled.eps], dtype=np.float32)
        report.layers.append(
            LayerReport(
                name=prefix,
                frobenius_norm=s,
                scaled=s > 1.0,
                filter_norms_before=[float(v) for v in before],
                filter_norms_after=[float(v) for v in filter_norms(scaled.weight)],
                repairs=records,
                threshold=threshold,
                eps_before=layer.eps,
                eps_after=scaled.eps,
            )
        )
    return out, report


SUMMARY_COLUMNS = [
    "layer",
    "conv_fro_norm",
    "gamma_min",
    "gamma_max",
    "gamma_mean",
    "beta_min",
    "beta_max",
    "beta_mean",
    "rm_mean",
    "rv_mean",
    "frac_filters_above_1",
    "frac_filters_below_0p1",
]


def weight_distribution_summary(tensors, default_eps=1e-5):
    """Per-layer norm and BN statistics, as a list of column dicts."""
    groups, _ = group_layers(tensors, default_eps=default_eps)
    rows = []
    for layer in groups:
        norms = filter_norms(layer.weight)
        rows.append(
            {
                "layer": layer.name,
                "conv_fro_norm": layer_frobenius_norm(layer),
                "gamma_min": float(layer.gamma.min()),
                "gamma_max": float(layer.gamma.max()),
                "gamma_mean": float(layer.gamma.mean()),
                "beta_min": float(layer.beta.min()),
                "beta_max": float(layer.beta.max()),
                "beta_mean": float(layer.beta.mean()),
                "rm_mean": float(layer.running_mean.mean()),
                "rv_mean": float(layer.running_var.mean()),
                "frac_filters_above_1": float(np.mean(norms > 1.0)),
                "frac_filters_below_0p1": float(np.mean(norms < DEAD_FILTER_THRESHOLD)),
            }
        )
    return rows


def summary_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()
