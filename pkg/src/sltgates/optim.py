"""Adam over gate means."""

from __future__ import annotations

import numpy as np

from . import kernels
from .tensor import Tensor


class MissingGradError(RuntimeError):
    pass


class Adam:
    """Bias-corrected Adam; no weight decay, no clipping.

    Only tensors that require grad are accepted, which keeps frozen weights
    out of reach by construction.
    """

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        for p in self.params:
            if not isinstance(p, Tensor) or not p.requires_grad:
                raise ValueError("Adam only optimizes tensors with requires_grad=True")
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.lr = float(lr)
        self.beta1, self.beta2 = (float(b) for b in betas)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise MissingGradError(f"parameter {i} has no gradient")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            kernels.adam_update(p.data, p.grad, m, v, self.lr, self.beta1, self.beta2,
                                self.eps, bc1, bc2)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def state_dict(self) -> dict:
        return {"t": self.t, "lr": self.lr, "betas": (self.beta1, self.beta2), "eps": self.eps}
