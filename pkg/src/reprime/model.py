"""MiniNet: a small conv+BN encoder with a canonical parameter naming scheme.

Each block is conv3x3 (stride 1, pad 1, no bias) -> batch norm -> ReLU ->
2x2 max pool; a global average pool at the end makes the feature dimension
independent of the input size. Parameter names follow the convention
``block{i}.conv.weight`` and ``block{i}.bn.{gamma,beta,running_mean,
running_var}``, which is also the contract with the archive format and the
surgery pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    BNParams,
    ShapeError,
    Tensor,
    batch_norm,
    conv2d,
    global_avg_pool,
    max_pool2,
    relu,
)

__all__ = ["ModelSpec", "Model", "build_model", "load_model", "encode", "he_std"]

DEFAULT_BN_EPS = 1e-5


@dataclass(frozen=True)
class ModelSpec:
    in_channels: int = 3
    input_size: int = 32  # nominal; the encoder itself is input-size agnostic
    blocks: tuple = (16, 32, 64, 128)
    kernel: int = 3
    bn_eps: float = DEFAULT_BN_EPS

    def __post_init__(self):
        if len(self.blocks) < 1:
            raise ValueError("model needs at least one block")
        if any(c <= 0 for c in self.blocks):
            raise ValueError("channel counts must be positive")
        if self.in_channels <= 0 or self.input_size < 8:
            raise ValueError("in_channels must be positive and input_size >= 8")
        if self.bn_eps <= 0:
            raise ValueError("bn_eps must be positive")

    @property
    def feature_dim(self):
        return self.blocks[-1]


def he_std(fan_in: int) -> float:
    return float(np.sqrt(2.0 / fan_in))


class Model:
    """Parameter container for the encoder; forward pass lives in encode()."""

    def __init__(self, spec: ModelSpec, weights, bns):
        self.spec = spec
        self.weights = weights  # list of conv weight Tensors, one per block
        self.bns = bns  # list of BNParams, one per block

    def parameters(self) -> dict:
        """Trainable tensors keyed by canonical name."""
        out = {}
        for i, (w, bn) in enumerate(zip(self.weights, self.bns)):
            out[f"block{i}.conv.weight"] = w
            out[f"block{i}.bn.gamma"] = bn.gamma
            out[f"block{i}.bn.beta"] = bn.beta
        return out

    def state(self) -> dict:
        """Full state as numpy arrays, including running statistics."""
        out = {}
        for i, (w, bn) in enumerate(zip(self.weights, self.bns)):
            out[f"block{i}.conv.weight"] = w.data.copy()
            out[f"block{i}.bn.gamma"] = bn.gamma.data.copy()
            out[f"block{i}.bn.beta"] = bn.beta.data.copy()
            out[f"block{i}.bn.running_mean"] = bn.running_mean.copy()
            out[f"block{i}.bn.running_var"] = bn.running_var.copy()
            if bn.eps != self.spec.bn_eps:
                out[f"block{i}.bn.eps"] = np.array([bn.eps], dtype=np.float32)
        return out

    def copy(self) -> "Model":
        return Model(
            self.spec,
            [Tensor(w.data.copy()) for w in self.weights],
            [bn.copy() for bn in self.bns],
        )


def build_model(spec: ModelSpec, seed: int) -> Model:
    """He-normal conv weights; gamma=1, beta=0, running mean=0, var=1."""
    rng = np.random.default_rng(seed)
    weights, bns = [], []
    c_in = spec.in_channels
    for c_out in spec.blocks:
        fan_in = c_in * spec.kernel * spec.kernel
        w = rng.normal(0.0, he_std(fan_in), size=(c_out, c_in, spec.kernel, spec.kernel))
        weights.append(Tensor(w.astype(np.float32)))
        bns.append(BNParams(c_out, eps=spec.bn_eps))
        c_in = c_out
    return Model(spec, weights, bns)


def load_model(spec: ModelSpec, tensors: dict) -> Model:
    """Rebuild a model from a state dict, validating names and shapes."""
    weights, bns = [], []
    c_in = spec.in_channels
    for i, c_out in enumerate(spec.blocks):
        prefix = f"block{i}."
        try:
            w = np.asarray(tensors[prefix + "conv.weight"], dtype=np.float32)
            gamma = np.asarray(tensors[prefix + "bn.gamma"], dtype=np.float32)
            beta = np.asarray(tensors[prefix + "bn.beta"], dtype=np.float32)
            rm = np.asarray(tensors[prefix + "bn.running_mean"], dtype=np.float32)
            rv = np.asarray(tensors[prefix + "bn.running_var"], dtype=np.float32)
        except KeyError as e:
            raise KeyError(f"checkpoint is missing tensor {e.args[0]!r}") from None
        expect = (c_out, c_in, spec.kernel, spec.kernel)
        if w.shape != expect:
            raise ShapeError(f"{prefix}conv.weight has shape {w.shape}, expected {expect}")
        for nm, arr in (("gamma", gamma), ("beta", beta), ("running_mean", rm), ("running_var", rv)):
            if arr.shape != (c_out,):
                raise ShapeError(f"{prefix}bn.{nm} has shape {arr.shape}, expected ({c_out},)")
        eps_key = prefix + "bn.eps"
        eps = float(tensors[eps_key][0]) if eps_key in tensors else spec.bn_eps
        bn = BNParams(c_out, eps=eps)
        bn.gamma = Tensor(gamma.copy())
        bn.beta = Tensor(beta.copy())
        bn.running_mean = rm.copy()
        bn.running_var = rv.copy()
        weights.append(Tensor(w.copy()))
        bns.append(bn)
        c_in = c_out
    return Model(spec, weights, bns)


def encode(model: Model, batch, mode="train", update_stats=True) -> Tensor:
    """Run the encoder on an NCHW batch, returning [N, feature_dim] features.

    The input must be at least 8 pixels on each side; pooling is skipped once
    a dimension reaches 1, so 16-, 32- and 96-pixel crops all work unchanged.
    """
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    if x.ndim != 4:
        raise ShapeError(f"encode expects NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    if c != model.spec.in_channels:
        raise ShapeError(f"encode expects {model.spec.in_channels} channels, got {c}")
    if h < 8 or w < 8:
        raise ShapeError(f"spatial dims too small for the encoder: {h}x{w} (need >= 8)")
    for weight, bn in zip(model.weights, model.bns):
        x = conv2d(x, weight, stride=1, padding=model.spec.kernel // 2)
        x = batch_norm(x, bn, mode=mode, update_stats=update_stats and mode == "train")
        x = relu(x)
        _, _, hh, ww = x.shape
        if hh >= 2 and ww >= 2:
            x = max_pool2(x)
    return global_avg_pool(x)
