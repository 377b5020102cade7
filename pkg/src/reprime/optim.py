"""SGD-with-momentum and Adam with decoupled weight decay.

Both optimizers update parameter tensors in place; that is the only
sanctioned mutation of parameters during training. Weight decay is applied
as ``p -= lr * wd * p`` before the gradient step (decoupled form).
"""

from __future__ import annotations

import numpy as np



__all__ = ["SGD", "Adam", "make_optimizer", "optimizer_step"]


class SGD:
    kind = "sgd-momentum"

    def __init__(self, lr, momentum=0.9, weight_decay=0.0):
        if lr < 0 or momentum < 0 or weight_decay < 0:
            raise ValueError("optimizer hyperparameters must be non-negative")
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self._velocity = {}

    def step(self, params: dict, grads: dict):
        """Apply one update. ``grads`` maps the same names to numpy arrays."""
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.data.shape:
                raise ValueError(f"grad shape {g.shape} != param shape {p.data.shape} for {name}")
            if self.weight_decay:
                p.data -= np.float32(self.lr * self.weight_decay) * p.data
            v = self._velocity.get(name)
            if v is None:
                v = np.zeros_like(p.data)
                self._velocity[name] = v
            v *= np.float32(self.momentum)
            v += g
            p.data -= np.float32(self.lr) * v
        return params


class Adam:
    kind = "adam"

    def __init__(self, lr=3e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-4):
        if lr < 0 or weight_decay < 0 or not (0 <= betas[0] < 1 and 0 <= betas[1] < 1):
            raise ValueError("optimizer hyperparameters must be non-negative")
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self._m = {}
        self._v = {}
        self._t = 0

    def step(self, params: dict, grads: dict):
        self._t += 1
        bc1 = 1.0 - self.beta1**self._t
        bc2 = 1.0 - self.beta2**self._t
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.data.shape:
                raise ValueError(f"grad shape {g.shape} != param shape {p.data.shape} for {name}")
            if self.weight_decay:
                p.data -= np.float32(self.lr * self.weight_decay) * p.data
            m = self._m.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                v = np.zeros_like(p.data)
                self._m[name], self._v[name] = m, v
            else:
                v = self._v[name]
            m *= np.float32(self.beta1)
            m += np.float32(1 - self.beta1) * g
            v *= np.float32(self.beta2)
            v += np.float32(1 - self.beta2) * (g * g)
            mhat = m / np.float32(bc1)
            vhat = v / np.float32(bc2)
            p.data -= np.float32(self.lr) * mhat / (np.sqrt(vhat) + np.float32(self.eps))
        return params


def make_optimizer(kind="adam", lr=3e-4, weight_decay=1e-4, momentum=0.9, betas=(0.9, 0.999)):
    if kind == "adam":
        return Adam(lr=lr, betas=betas, weight_decay=weight_decay)
    if kind in ("sgd", "sgd-momentum"):
        return SGD(lr=lr, momentum=momentum, weight_decay=weight_decay)
    raise ValueError(f"unknown optimizer kind {kind!r}")


def optimizer_step(state, params: dict, grads: dict) -> dict:
    """Free-function form: apply one update with the given optimizer state."""
    return state.step(params, grads)
