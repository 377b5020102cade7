#!/usr/bin/env python3
# Inspecting a checkpoint's weight distribution: per-layer Frobenius norms,
# batch-norm parameter statistics, and the fraction of filters above norm 1
# or below the dead threshold 0.1. Self-supervised checkpoints tend to sit
# far above norm 1; freshly initialized ones do too (He init gives a layer
# norm of sqrt(2K)), which is exactly why the scaling guard matters.

import numpy as np

from reprime.model import ModelSpec, build_model
from reprime.surgery import summary_to_csv, weight_distribution_summary

model = build_model(ModelSpec(), seed=0)
state = model.state()

print("fresh MiniNet:")
print(summary_to_csv(weight_distribution_summary(state)))

# simulate an "exploded" checkpoint: multiply every conv layer by 10 and
# kill two filters in the first block
state["block0.conv.weight"][:2] *= 1e-4
for name in list(state):
    if name.endswith("conv.weight"):
        state[name] = (state[name] * 10).astype(np.float32)

print("after inflating weights x10 and killing two filters:")
print(summary_to_csv(weight_distribution_summary(state)))
