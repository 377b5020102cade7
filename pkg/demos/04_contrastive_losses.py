#!/usr/bin/env python3
# The three self-supervised objectives on hand-built embeddings.

import numpy as np

from reprime.autodiff import Tensor
from reprime.contrastive import (
    PredictionHead,
    PrototypeBank,
    byol_loss,
    nt_xent_loss,
    sinkhorn_assign,
    swav_loss,
)

# --- NT-Xent: positives pull together, everything else pushes apart.
# four identical embeddings score exactly log(2N-1) = log 3
z = Tensor(np.ones((4, 8), dtype=np.float32))
print(f"NT-Xent, all embeddings identical: {nt_xent_loss(z).item():.4f}"
      f"  (log 3 = {np.log(3):.4f})")

# separating the two pairs drops the loss
z = Tensor(np.array([[1, 0], [1, 0], [0, 1], [0, 1]], dtype=np.float32))
print(f"NT-Xent, two separated pairs, tau=1: {nt_xent_loss(z, temperature=1.0).item():.4f}")

# --- Sinkhorn: balanced soft cluster assignments.
scores = np.zeros((4, 8), dtype=np.float32)
q = sinkhorn_assign(scores)
print(f"sinkhorn on uniform scores: every entry {q.data[0, 0]:.4f} (= 1/K)")

scores = np.zeros((4, 4), dtype=np.float32)
np.fill_diagonal(scores, 10.0)
q = sinkhorn_assign(scores)
print("sinkhorn on strongly diagonal scores ~ identity:",
      np.allclose(q.data, np.eye(4), atol=1e-3))

# --- SwaV: swapped prediction between two views of the same batch.
rng = np.random.default_rng(0)
protos = PrototypeBank.build(n_prototypes=8, d_proj=16, seed=1)
view = rng.normal(size=(6, 16)).astype(np.float32)
view /= np.linalg.norm(view, axis=1, keepdims=True)
noisy = view + 0.05 * rng.normal(size=view.shape).astype(np.float32)
loss_same = swav_loss([Tensor(view), Tensor(view)], protos).item()
loss_noisy = swav_loss([Tensor(view), Tensor(noisy)], protos).item()
print(f"swav: identical views {loss_same:.4f} <= slightly different views {loss_noisy:.4f}")

# --- BYOL: regression onto the target projection; 2 - 2cos per sample.
pred = PredictionHead(Tensor(np.eye(4, dtype=np.float32)),
                      Tensor(np.eye(4, dtype=np.float32)))
online = np.array([[1, 0, 0, 0], [0, 1, 0, 0]], dtype=np.float32)
aligned = byol_loss(Tensor(online), online.copy(), pred).item()
orthogonal = byol_loss(
    Tensor(online),
    np.array([[0, 0, 1, 0], [0, 0, 0, 1]], dtype=np.float32),
    pred,
).item()
print(f"byol: aligned targets {aligned:.4f}, orthogonal targets {orthogonal:.4f} (= 2)")
