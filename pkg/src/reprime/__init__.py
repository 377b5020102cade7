"""reprime: two-step self-supervised pretraining with checkpoint weight surgery.

A small, numpy-backed toolkit: tape-based autodiff, a compact convolutional
encoder, a bit-exact tensor archive format, Frobenius-norm weight scaling and
dead-filter repair, three contrastive objectives (NT-Xent, SwaV-style swapped
assignment, BYOL), synthetic datasets, and an experiment harness with linear
probing and fine-tuning.
"""

__version__ = "0.1.0"
