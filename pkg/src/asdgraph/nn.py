"""Small layer toolkit on top of the autodiff primitives."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def prefixed(prefix: str, items: dict) -> dict:
    return {f"{prefix}.{k}": v for k, v in items.items()}


class Linear:
    """y = x @ w + b with He-normal weights and zero bias."""

    def __init__(self, rng: np.random.Generator, fan_in: int, fan_out: int):
        scale = np.sqrt(2.0 / fan_in)
        self.w = Tensor(rng.normal(0.0, scale, size=(fan_in, fan_out)),
                        requires_grad=True)
        self.b = Tensor(np.zeros(fan_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.w), self.b)

    def zero_(self) -> None:
        self.w.data[:] = 0.0
        self.b.data[:] = 0.0

    def named_parameters(self) -> dict[str, Tensor]:
        return {"w": self.w, "b": self.b}

    def named_buffers(self) -> dict[str, np.ndarray]:
        return {}


class BatchNorm:
    """Column-wise batch norm; train mode maintains running statistics."""

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return ad.batch_norm(x, self.gamma, self.beta, self.running_mean,
                             self.running_var, training,
                             momentum=self.momentum, eps=self.eps)

    def named_parameters(self) -> dict[str, Tensor]:
        return {"gamma": self.gamma, "beta": self.beta}

    def named_buffers(self) -> dict[str, np.ndarray]:
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class EdgeMlp:
    """The EdgeConvolution sub-network: two linear layers, each followed by
    batch normalization and ReLU."""

    def __init__(self, rng: np.random.Generator, d_in: int, hidden: int, d_out: int):
        self.lin1 = Linear(rng, d_in, hidden)
        self.bn1 = BatchNorm(hidden)
        self.lin2 = Linear(rng, hidden, d_out)
        self.bn2 = BatchNorm(d_out)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        h = ad.relu(self.bn1(self.lin1(x), training))
        return ad.relu(self.bn2(self.lin2(h), training))

    def zero_output_layer_(self) -> None:
        """Zero the second linear layer; the whole sub-network then emits 0."""
        self.lin2.zero_()

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, child in (("lin1", self.lin1), ("bn1", self.bn1),
                            ("lin2", self.lin2), ("bn2", self.bn2)):
            out.update(prefixed(name, child.named_parameters()))
        return out

    def named_buffers(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, child in (("bn1", self.bn1), ("bn2", self.bn2)):
            out.update(prefixed(name, child.named_buffers()))
        return out


class MlpEncoder:
    """Toy two-layer encoder plus an auxiliary 2-class head.

    Consumes one flattened clip per row; a single parameter set serves
    every forward pass of its modality, so gradients accumulate across
    passes.
    """

    def __init__(self, rng: np.random.Generator, d_in: int, width: int, d_out: int):
        self.lin1 = Linear(rng, d_in, width)
        self.lin2 = Linear(rng, width, d_out)
        self.aux = Linear(rng, d_out, 2)

    def __call__(self, x: Tensor) -> tuple[Tensor, Tensor]:
        emb = self.lin2(ad.relu(self.lin1(x)))
        return emb, self.aux(emb)

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, child in (("lin1", self.lin1), ("lin2", self.lin2),
                            ("aux", self.aux)):
            out.update(prefixed(name, child.named_parameters()))
        return out

    def named_buffers(self) -> dict[str, np.ndarray]:
        return {}
