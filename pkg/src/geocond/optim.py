"""Parameter update rules: plain gradient step, Adam, RMSProp and weight clipping."""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import UsageError


def _grad_of(p: Tensor) -> np.ndarray:
    if p.grad is None:
        raise UsageError(f"parameter {p!r} has no gradient")
    return p.grad


def sgd_step(params, lr: float) -> None:
    """p ← p − lr·∇p for every parameter."""
    grads = [_grad_of(p) for p in params]
    for p, g in zip(params, grads):
        p.data = p.data - p.dtype.type(lr) * g


def clip_weights(params, c: float) -> None:
    """Clamp every entry to [-c, c] in place."""
    if c <= 0:
        raise UsageError("clip value must be positive")
    for p in params:
        np.clip(p.data, -c, c, out=p.data)


class Optimizer:
    def __init__(self, params, lr: float):
        self.params = list(params)
        self.lr = lr
        self.step_count = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        grads = [_grad_of(p) for p in self.params]
        self.step_count += 1
        for i, (p, g) in enumerate(zip(self.params, grads)):
            self._update(i, p, g)

    def _update(self, i: int, p: Tensor, g: np.ndarray) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    def _update(self, i, p, g):
        p.data = p.data - p.dtype.type(self.lr) * g


class Adam(Optimizer):
    """Adam with bias-corrected moment estimates.

    Moment buffers share each parameter's dtype and shape.
    """

    def __init__(self, params, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def _update(self, i, p, g):
        t = self.step_count
        m, v = self.m[i], self.v[i]
        m *= self.beta1
        m += (1 - self.beta1) * g
        v *= self.beta2
        v += (1 - self.beta2) * (g * g)
        step = self.lr / (1 - self.beta1 ** t)
        denom = np.sqrt(v / (1 - self.beta2 ** t)) + self.eps
        p.data = p.data - (step * m / denom).astype(p.dtype)


class RMSProp(Optimizer):
    def __init__(self, params, lr: float = 5e-5, decay: float = 0.99, eps: float = 1e-8):
        super().__init__(params, lr)
        self.decay, self.eps = decay, eps
        self.sq = [np.zeros_like(p.data) for p in self.params]

    def _update(self, i, p, g):
        sq = self.sq[i]
        sq *= self.decay
        sq += (1 - self.decay) * (g * g)
        p.data = p.data - (self.lr * g / (np.sqrt(sq) + self.eps)).astype(p.dtype)


def adam_step(params, state: Adam) -> None:
    """Functional spelling of ``state.step()`` for callers holding the state."""
    if [id(p) for p in params] != [id(p) for p in state.params]:
        raise UsageError("Adam state was built for a different parameter list")
    state.step()
