#!/usr/bin/env python3
# Weight surgery in two moves. First dead filters (norm < 0.1) are replaced
# by copies of live filters from the same layer; then any layer whose
# Frobenius norm s exceeds 1 is rescaled: conv weights, running mean and
# gamma by 1/sqrt(s), running variance by 1/s^2, beta untouched. In exact
# mode eps is also divided by s^2 and the eval-mode output is preserved to
# float precision.

import numpy as np

from reprime.autodiff import BNParams, Tensor, batch_norm, conv2d
from reprime.surgery import (
    LayerGroup,
    filter_norms,
    layer_frobenius_norm,
    scale_layer,
    surgery_pipeline,
)
from reprime.model import ModelSpec, build_model

rng = np.random.default_rng(0)

# one conv+BN layer with running stats calibrated to its input distribution
w = (6.0 * rng.normal(0, 0.15, size=(8, 3, 3, 3))).astype(np.float32)
calib = rng.normal(size=(32, 3, 8, 8)).astype(np.float32)
conv_out = conv2d(Tensor(calib), Tensor(w), 1, 1).data
layer = LayerGroup(
    "demo", w,
    gamma=np.ones(8, np.float32), beta=np.zeros(8, np.float32),
    running_mean=conv_out.mean(axis=(0, 2, 3)),
    running_var=conv_out.var(axis=(0, 2, 3)),
)

s = layer_frobenius_norm(layer)
scaled = scale_layer(layer, exact_eps=True)
print(f"layer norm s = {s:.3f} -> {layer_frobenius_norm(scaled):.3f} (= sqrt(s))")


def forward(lay, x):
    bn = BNParams(8, eps=lay.eps)
    bn.gamma, bn.beta = Tensor(lay.gamma), Tensor(lay.beta)
    bn.running_mean, bn.running_var = lay.running_mean, lay.running_var
    return batch_norm(conv2d(Tensor(x), Tensor(lay.weight), 1, 1), bn, mode="eval").data


x = rng.normal(size=(4, 3, 8, 8)).astype(np.float32)
diff = np.abs(forward(layer, x) - forward(scaled, x)).max()
print(f"eval-mode output difference after scaling (exact mode): {diff:.2e}")

# the full pipeline over a checkpoint with dead filters
state = build_model(ModelSpec(blocks=(8, 16)), 0).state()
state["block0.conv.weight"][0] *= 1e-5
new_state, report = surgery_pipeline(state, strategy="copy", threshold=0.1, seed=0)
for lr in report.layers:
    repaired = [r.index for r in lr.repairs]
    print(
        f"{lr.name}: s={lr.frobenius_norm:.2f} scaled={lr.scaled} "
        f"repaired_filters={repaired}"
    )
print("post-repair min filter norm:",
      min(filter_norms(new_state["block0.conv.weight"]).min(),
          filter_norms(new_state["block1.conv.weight"]).min()).round(4))
