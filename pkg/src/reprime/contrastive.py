"""The three self-supervised objectives plus the heads they need.

NT-Xent contrasts l2-normalized projections of paired views against every
other row in the batch; the SwaV-style loss swaps balanced Sinkhorn cluster
assignments between views; BYOL regresses a predicted online projection onto
a gradient-free target projection. The target network tracks the online
parameters with an exponential moving average.
"""

from __future__ import annotations

import numpy as np

from .autodiff import (
    ShapeError,
    Tensor,
    _active_tape,
    add,
    div,
    gather_pairs,
    l2_normalize,
    log_softmax,
    matmul,
    mul,
    neg,
    relu,
    sub,
    tmean,
    tsum,
    transpose,
)
from .model import Model, he_std

__all__ = [
    "ProjectionHead",
    "PredictionHead",
    "PrototypeBank",
    "TargetNetwork",
    "nt_xent_loss",
    "sinkhorn_assign",
    "swav_loss",
    "byol_loss",
    "ema_update",
    "interleaved_pairing",
    "block_pairing",
]

DEFAULT_TEMPERATURE = 0.5
DEFAULT_SWAV_TEMPERATURE = 0.1
DEFAULT_SINKHORN_SHARPEN = 0.05
DEFAULT_SINKHORN_ITERS = 3
DEFAULT_EMA_MOMENTUM = 0.99
DEFAULT_PROJ_DIM = 32
DEFAULT_N_PROTOTYPES = 16


class _TwoLayerHead:
    """x @ W1 -> relu -> @ W2, no biases."""

    prefix = "head"

    def __init__(self, w1: Tensor, w2: Tensor):
        if w1.shape[1] != w2.shape[0]:
            raise ShapeError(f"head shapes {w1.shape} and {w2.shape} do not chain")
        self.w1 = w1
        self.w2 = w2

    @classmethod
    def build(cls, d_in, d_out, d_hidden=None, seed=0):
        d_hidden = d_in if d_hidden is None else d_hidden
        rng = np.random.default_rng(seed)
        w1 = rng.normal(0.0, he_std(d_in), size=(d_in, d_hidden)).astype(np.float32)
        w2 = rng.normal(0.0, he_std(d_hidden), size=(d_hidden, d_out)).astype(np.float32)
        return cls(Tensor(w1), Tensor(w2))

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(relu(matmul(x, self.w1)), self.w2)

    def parameters(self) -> dict:
        return {f"{self.prefix}.w1": self.w1, f"{self.prefix}.w2": self.w2}

    def copy(self):
        return type(self)(Tensor(self.w1.data.copy()), Tensor(self.w2.data.copy()))


class ProjectionHead(_TwoLayerHead):
    """Maps encoder features into the contrastive embedding space."""

    prefix = "proj"

    @classmethod
    def build(cls, d_feat, d_proj=DEFAULT_PROJ_DIM, d_hidden=None, seed=0):
        return super().build(d_feat, d_proj, d_hidden=d_hidden, seed=seed)


class PredictionHead(_TwoLayerHead):
    """BYOL's extra map from online projections to target projections."""

    prefix = "pred"

    @classmethod
    def build(cls, d_proj, d_hidden=None, seed=0):
        return super().build(d_proj, d_proj, d_hidden=d_hidden, seed=seed)


class PrototypeBank:
    """Learnable cluster centers; rows kept unit-norm."""

    def __init__(self, weight: Tensor):
        self.weight = weight
        self.renormalize()

    @classmethod
    def build(cls, n_prototypes=DEFAULT_N_PROTOTYPES, d_proj=DEFAULT_PROJ_DIM, seed=0):
        rng = np.random.default_rng(seed)
        w = rng.normal(0.0, 1.0, size=(n_prototypes, d_proj)).astype(np.float32)
        return cls(Tensor(w))

    @property
    def n_prototypes(self):
        return self.weight.shape[0]

    def renormalize(self):
        """Project every row back to the unit sphere; call after each step."""
        w = self.weight.data
        norms = np.sqrt(np.sum(w.astype(np.float64) ** 2, axis=1, keepdims=True))
        if np.any(norms <= 1e-20):
            raise ValueError("prototype row collapsed to zero norm")
        w /= norms.astype(np.float32)

    def parameters(self) -> dict:
        return {"prototypes.weight": self.weight}


def interleaved_pairing(two_n: int) -> np.ndarray:
    """Partner map for rows laid out (view_a_0, view_b_0, view_a_1, ...)."""
    partner = np.arange(two_n)
    partner[0::2] += 1
    partner[1::2] -= 1
    return partner


def block_pairing(two_n: int) -> np.ndarray:
    """Partner map for rows laid out (all of view_a, then all of view_b)."""
    n = two_n // 2
    return np.concatenate([np.arange(n) + n, np.arange(n)])


def nt_xent_loss(z: Tensor, pairing=None, temperature: float = DEFAULT_TEMPERATURE) -> Tensor:
    """Normalized temperature-scaled cross-entropy over 2N projected views.

    Rows are l2-normalized internally. For each anchor m with positive
    partner n, the loss is -log of exp(cos(z_m,z_n)/t) over the sum of
    exp(cos(z_m,z_k)/t) for every k != m; the result is the mean over all
    2N ordered pairs. ``pairing`` maps each row to its partner row and
    defaults to the interleaved layout (2i, 2i+1).
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    two_n = z.shape[0]
    if two_n < 4:
        raise ValueError(f"need at least 4 rows (one negative pair), got {two_n}")
    if two_n % 2:
        raise ValueError(f"row count must be even, got {two_n}")
    partner = interleaved_pairing(two_n) if pairing is None else np.asarray(pairing, dtype=np.intp)
    if partner.shape != (two_n,) or np.any(partner == np.arange(two_n)):
        raise ValueError("pairing must map every row to a different row")

    zn = l2_normalize(z, axis=1)
    logits = div(matmul(zn, transpose(zn)), temperature)
    # exclude self-similarity from every denominator
    mask = np.zeros((two_n, two_n), dtype=np.float32)
    np.fill_diagonal(mask, -1e9)
    logp = log_softmax(add(logits, mask), axis=1)
    pos = gather_pairs(logp, np.arange(two_n), partner)
    return neg(tmean(pos))


def sinkhorn_assign(
    scores,
    n_iters: int = DEFAULT_SINKHORN_ITERS,
    sharpen: float = DEFAULT_SINKHORN_SHARPEN,
) -> Tensor:
    """Balanced soft assignments from a [B,K] score matrix.

    Iterates exp(scores/sharpen) through alternating column (sum 1/K) and row
    (sum 1/B) renormalizations, then rescales rows to sum to 1. Gradients do
    not flow through the result; internals run in f64 so sharp scores cannot
    overflow. Columns of the result each carry about B/K total mass.
    """
    s = scores.data if isinstance(scores, Tensor) else np.asarray(scores)
    if s.ndim != 2:
        raise ShapeError(f"sinkhorn_assign expects [B,K] scores, got {s.shape}")
    b, k = s.shape
    if b < 1 or k < 2:
        raise ValueError(f"need B >= 1 and K >= 2, got {b}x{k}")
    if n_iters < 1:
        raise ValueError(f"n_iters must be >= 1, got {n_iters}")
    if not np.all(np.isfinite(s)):
        raise ValueError("sinkhorn_assign: scores must be finite")
    q = np.exp((s.astype(np.float64) - s.max()) / sharpen)
    for _ in range(n_iters):
        q /= k * q.sum(axis=0, keepdims=True)
        q /= b * q.sum(axis=1, keepdims=True)
    q /= q.sum(axis=1, keepdims=True)
    return Tensor(q.astype(np.float32))


def swav_loss(
    projections,
    prototypes: PrototypeBank,
    temperature: float = DEFAULT_SWAV_TEMPERATURE,
    sinkhorn_iters: int = DEFAULT_SINKHORN_ITERS,
    sinkhorn_sharpen: float = DEFAULT_SINKHORN_SHARPEN,
) -> Tensor:
    """Swapped-prediction loss over >= 2 views of the same batch.

    Each view's projections are l2-normalized and scored against the
    prototypes; Sinkhorn codes (no gradient) from view a supervise the
    temperature-softened scores of every other view b. The result is the
    mean cross-entropy over ordered view pairs.
    """
    views = list(projections)
    if len(views) < 2:
        raise ValueError(f"need at least 2 views, got {len(views)}")
    shape = views[0].shape
    if any(v.shape != shape for v in views):
        raise ShapeError("all views must share the same projection shape")
    batch = shape[0]
    proto_t = transpose(prototypes.weight)
    scores = [matmul(l2_normalize(v, axis=1), proto_t) for v in views]
    codes = [
        sinkhorn_assign(s.detach(), n_iters=sinkhorn_iters, sharpen=sinkhorn_sharpen).data
        for s in scores
    ]
    pair_losses = []
    for a in range(len(views)):
        for b in range(len(views)):
            if a == b:
                continue
            logp = log_softmax(div(scores[b], temperature), axis=1)
            ce = neg(div(tsum(mul(Tensor(codes[a]), logp)), batch))
            pair_losses.append(ce)
    total = pair_losses[0]
    for extra in pair_losses[1:]:
        total = add(total, extra)
    return div(total, len(pair_losses))


def byol_loss(online_proj: Tensor, target_proj, predictor: PredictionHead) -> Tensor:
    """Mean squared distance between normalized prediction and target rows.

    ``target_proj`` must carry no gradient (stop-gradient contract). To get
    the symmetrized objective, stack both view orders: online (a, b) against
    target (b, a); the row mean then averages the two directions.
    """
    if isinstance(target_proj, Tensor):
        tape = _active_tape()
        if tape is not None and target_proj.node is not None and target_proj.node[0] is tape:
            raise ValueError("target projections must not carry gradients; detach them")
        target = target_proj.data
    else:
        target = np.asarray(target_proj, dtype=np.float32)
    pred = l2_normalize(predictor(online_proj), axis=1)
    if target.shape != pred.shape:
        raise ShapeError(f"online {pred.shape} vs target {target.shape}")
    tnorm = target / np.linalg.norm(target, axis=1, keepdims=True)
    diff = sub(pred, Tensor(tnorm))
    return tmean(tsum(mul(diff, diff), axis=1))


class TargetNetwork:
    """Gradient-free mirror of the online encoder and projection head."""

    def __init__(self, model: Model, projection: ProjectionHead, momentum=DEFAULT_EMA_MOMENTUM):
        if not 0 <= momentum <= 1:
            raise ValueError(f"momentum must lie in [0,1], got {momentum}")
        self.model = model
        self.projection = projection
        self.momentum = momentum

    @classmethod
    def from_online(cls, model: Model, projection: ProjectionHead, momentum=DEFAULT_EMA_MOMENTUM):
        return cls(model.copy(), projection.copy(), momentum)

    def tensors(self) -> dict:
        """Every mirrored array, running statistics included."""
        out = dict(self.model.parameters())
        for i, bn in enumerate(self.model.bns):
            out[f"block{i}.bn.running_mean"] = bn.running_mean
            out[f"block{i}.bn.running_var"] = bn.running_var
        out.update(self.projection.parameters())
        return out


def ema_update(target: TargetNetwork, online_tensors: dict, momentum=None) -> TargetNetwork:
    """target <- m * target + (1 - m) * online, for every mirrored tensor."""
    m = target.momentum if momentum is None else momentum
    if not 0 <= m <= 1:
        raise ValueError(f"momentum must lie in [0,1], got {m}")
    mirrored = target.tensors()
    if set(mirrored) != set(online_tensors):
        differ = sorted(set(mirrored).symmetric_difference(online_tensors))
        raise ValueError(f"online/target tensor names differ: {differ}")
    for name, tgt in mirrored.items():
        src = online_tensors[name]
        src_arr = src.data if isinstance(src, Tensor) else np.asarray(src, dtype=np.float32)
        tgt_arr = tgt.data if isinstance(tgt, Tensor) else tgt
        if tgt_arr.shape != src_arr.shape:
            raise ValueError(f"shape mismatch for {name}: {tgt_arr.shape} vs {src_arr.shape}")
        tgt_arr *= np.float32(m)
        tgt_arr += np.float32(1 - m) * src_arr
    return target
