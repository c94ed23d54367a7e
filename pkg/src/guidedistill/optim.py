"""Adam updates for a ParamStore, plus the linear learning-rate anneal."""

from __future__ import annotations

import numpy as np

from .autodiff import NonFiniteValue, ParamStore


class Adam:
    """Adam with the usual defaults (beta1=0.9, beta2=0.999, eps=1e-8).

    A missing gradient counts as zero: parameters with no gradient keep
    their value while the moments decay.  Any non-finite gradient aborts
    the whole step (no parameter is touched) by raising NonFiniteValue so
    the training loop can flag the run.
    """

    def __init__(self, params: ParamStore, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.steps = 0
        self._m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self._v = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else float(lr)
        grads = {}
        for name, t in self.params.items():
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            if not np.all(np.isfinite(g)):
                raise NonFiniteValue(f"non-finite gradient for parameter {name!r}")
            grads[name] = g
        self.steps += 1
        c1 = 1.0 - self.beta1**self.steps
        c2 = 1.0 - self.beta2**self.steps
        for name, t in self.params.items():
            g = grads[name]
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            t.data = t.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def linear_anneal(lr_start: float, lr_end: float, step: int, total: int) -> float:
    """Learning rate at 0-based `step` of `total`, annealed linearly start -> end."""
    if total <= 0:
        return lr_end
    frac = min(max(step / total, 0.0), 1.0)
    return lr_start + (lr_end - lr_start) * frac
