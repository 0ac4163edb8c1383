"""Adam with bias correction plus the milestone learning-rate schedule."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import NumericError


def adam_step(data: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
              t: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One in-place Adam update; t is the 1-based step count.

    The bias corrections are folded into scalars:
    lr * m_hat / (sqrt(v_hat) + eps) == c1 * m / (sqrt(v) + c2) with
    c1 = lr * sqrt(1 - beta2^t) / (1 - beta1^t), c2 = eps * sqrt(1 - beta2^t).
    """
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    bc2 = np.sqrt(1.0 - beta2 ** t)
    c1 = lr * bc2 / (1.0 - beta1 ** t)
    step = np.sqrt(v)
    step += eps * bc2
    np.divide(m, step, out=step)
    step *= c1
    data -= step


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        for name, p in self.params.items():
            if p.grad is None:
                continue
            if not np.all(np.isfinite(p.grad)):
                raise NumericError(f"non-finite gradient in parameter {name!r}")
            adam_step(p.data, p.grad, self.m[name], self.v[name], self.t,
                      self.lr, self.beta1, self.beta2, self.eps)


def milestone_lr(base_lr: float, milestones: list[int], gamma: float,
                 epoch: int) -> float:
    """base_lr decayed by gamma at each milestone epoch already reached."""
    decays = sum(1 for m in milestones if epoch >= m)
    return base_lr * gamma ** decays
