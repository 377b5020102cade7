#!/usr/bin/env python3
# A miniature end-to-end run of the whole idea: pretrain on a source domain,
# reuse those weights (after surgery) as initialization for a second
# pretraining stage on the target domain, and compare downstream accuracy
# against training from scratch. Budgets here are tiny so the script runs
# in about two minutes; the acceptance suite runs the full desk-scale
# version of this comparison.

import tempfile
from pathlib import Path

from reprime.datasets import generate_synthetic, source_preset, target_preset
from reprime.pretrain import PretrainConfig, SurgeryOptions, run_pretrain
from reprime.probe import ProbeConfig, compare_runs, comparison_to_csv, evaluate

workdir = Path(tempfile.mkdtemp())
BLOCKS = (8, 16, 32, 64)
SHORT = dict(iterations=10, batch_size=32, blocks=BLOCKS)

source = generate_synthetic(source_preset(seed=0))
target = generate_synthetic(target_preset(seed=1))
print(f"source: {len(source)} images / {source.n_classes} classes; "
      f"target: {len(target)} images / {target.n_classes} classes")

# stage 1: self-supervision on the source domain
stage1_cfg = PretrainConfig(
    method="simclr", epochs=10, seed=42, out_dir=str(workdir / "stage1"), **SHORT
)
_, stage1 = run_pretrain(stage1_cfg, source)
print(f"stage 1 loss: {stage1.losses[0]:.3f} -> {stage1.losses[-1]:.3f}")

# stage 2, three ways: from scratch, from stage 1, from stage 1 + surgery
variants = {
    "p1x": PretrainConfig(
        method="simclr", epochs=10, seed=0, out_dir=str(workdir / "p1x"), **SHORT
    ),
    "p2x": PretrainConfig(
        method="simclr", init=stage1.final_checkpoint, epochs=10, seed=0,
        out_dir=str(workdir / "p2x"), **SHORT
    ),
    "p2x+surgery": PretrainConfig(
        method="simclr", init=stage1.final_checkpoint,
        surgery=SurgeryOptions(mode="paper", strategy="copy"),
        epochs=10, seed=0, out_dir=str(workdir / "p2xs"), **SHORT
    ),
}

probe_cfg = ProbeConfig(mode="finetune", epochs=15, fraction=0.1, seed=0)
reports = []
for name, cfg in variants.items():
    model, metrics = run_pretrain(cfg, target)
    report = evaluate(model, target, probe_cfg, label=name)
    reports.append(report)
    print(f"{name:12s} pretrain loss {metrics.losses[-1]:.3f}  "
          f"probe accuracy {report.mean:.3f}")

print()
print(comparison_to_csv(compare_runs(reports, baseline_index=0)))
