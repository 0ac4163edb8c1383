"""Dense float64 tensors with reverse-mode automatic differentiation.

Small by design: exactly the primitives the speaker-graph models need.
Each operation validates shapes eagerly, computes its forward value with
numpy, and (when gradients are enabled) records a backward closure on the
output tensor. ``Tensor.backward()`` replays the closures in reverse
topological order and *accumulates* into ``.grad``, so a parameter reused
by several forward passes receives the sum of all branch gradients.

Everything is float64; the gradient-check tolerances in the test suite
rely on double precision.
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from .errors import CheckpointError, DataError, LabelError, ShapeError

_grad_enabled: bool = True

# Backward rules whose output is sign-flipped; a test-harness hook used by
# the verifier's mutation self-check. Never set in normal operation.
_flipped_backward_ops: set[str] = set()


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextmanager
def inject_backward_sign_flip(op_name: str):
    """Flip the sign of one op's backward rule. Test-harness hook only."""
    _flipped_backward_ops.add(op_name)
    try:
        yield
    finally:
        _flipped_backward_ops.discard(op_name)


class Tensor:
    """A dense n-dimensional float64 value, optionally on the tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into .grad of every reachable leaf.

        self must be scalar (size 1). Repeated calls keep accumulating.
        """
        if self.size != 1:
            raise ShapeError(f"backward() needs a scalar, got shape {self.shape}")
        # Iterative DFS topological order (graphs can be deep).
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self._seed_grad(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)

    def _seed_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad = self.grad + g

    def _accumulate(self, g: np.ndarray) -> None:
        # Copy on first write: g may alias a child's grad buffer.
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    # Operator sugar; the functions below do the real work.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(
    data: np.ndarray,
    parents: Sequence[Tensor],
    backward_fn: Callable[[np.ndarray], None],
    name: str,
) -> Tensor:
    """Build the output tensor, attaching the backward closure if needed."""
    tracked = tuple(p for p in parents if p.requires_grad)
    if not _grad_enabled or not tracked:
        return Tensor(data)
    out = Tensor(data, requires_grad=True)
    out._parents = tracked
    if name in _flipped_backward_ops:
        out._backward_fn = lambda g: backward_fn(-g)
    else:
        out._backward_fn = backward_fn
    return out


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _record(out_data, (a, b), backward, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: needs a matrix, got shape {a.shape}")

    def backward(g):
        a._accumulate(g.T)

    return _record(a.data.T.copy(), (a,), backward, "transpose")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum. Also allows (n, d) + (d,) bias rows and x + scalar."""
    if a.shape == b.shape:
        mode = "same"
    elif a.data.ndim == 2 and b.shape == (a.shape[1],):
        mode = "bias"
    elif b.size == 1:
        mode = "scalar"
    else:
        raise ShapeError(f"add: incompatible shapes {a.shape} + {b.shape}")
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            if mode == "same":
                b._accumulate(g)
            elif mode == "bias":
                b._accumulate(g.sum(axis=0))
            else:
                b._accumulate(g.sum().reshape(b.shape))

    return _record(out_data, (a, b), backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape == b.shape:
        mode = "same"
    elif b.size == 1:
        mode = "scalar"
    else:
        raise ShapeError(f"sub: incompatible shapes {a.shape} - {b.shape}")
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            if mode == "same":
                b._accumulate(-g)
            else:
                b._accumulate(-g.sum().reshape(b.shape))

    return _record(out_data, (a, b), backward, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} * {b.shape}")
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return _record(out_data, (a, b), backward, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        a._accumulate(c * g)

    return _record(a.data * c, (a,), backward, "scale")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat: empty tensor list")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return _record(out_data, tuple(tensors), backward, "concat")


def gather_rows(a: Tensor, indices) -> Tensor:
    """Select rows by index (repeats allowed); backward scatter-adds."""
    idx = np.asarray(indices, dtype=np.intp)
    if a.data.ndim < 1:
        raise ShapeError("gather_rows: needs at least 1 dimension")
    out_data = a.data[idx]

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        a._accumulate(ga)

    return _record(out_data, (a,), backward, "gather_rows")


def gather_elements(a: Tensor, rows, cols) -> Tensor:
    """Pick individual matrix entries; returns a 1-D vector."""
    r = np.asarray(rows, dtype=np.intp)
    c = np.asarray(cols, dtype=np.intp)
    if a.data.ndim != 2:
        raise ShapeError("gather_elements: needs a matrix")
    out_data = a.data[r, c]

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (r, c), g)
        a._accumulate(ga)

    return _record(out_data, (a,), backward, "gather_elements")


def reshape(a: Tensor, shape) -> Tensor:
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {tuple(shape)}")
    out_data = a.data.reshape(shape).copy()

    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return _record(out_data, (a,), backward, "reshape")


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0.0)

    def backward(g):
        a._accumulate(g * (a.data > 0.0))

    return _record(out_data, (a,), backward, "relu")


def sigmoid(a: Tensor) -> Tensor:
    # Stable in both tails.
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g):
        a._accumulate(g * out_data * (1.0 - out_data))

    return _record(out_data, (a,), backward, "sigmoid")


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        a._accumulate(g * out_data)

    return _record(out_data, (a,), backward, "exp")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise DataError("log: non-positive input")
    out_data = np.log(a.data)

    def backward(g):
        a._accumulate(g / a.data)

    return _record(out_data, (a,), backward, "log")


def mean(a: Tensor) -> Tensor:
    n = a.size
    if n == 0:
        raise ShapeError("mean: empty tensor")
    out_data = np.asarray(a.data.mean())

    def backward(g):
        a._accumulate(np.full_like(a.data, float(g) / n))

    return _record(out_data, (a,), backward, "mean")


def tsum(a: Tensor) -> Tensor:
    out_data = np.asarray(a.data.sum())

    def backward(g):
        a._accumulate(np.full_like(a.data, float(g)))

    return _record(out_data, (a,), backward, "sum")


def row_max_over_set(a: Tensor, groups: Sequence[Sequence[int]]) -> Tensor:
    """Per-group columnwise max over selected rows.

    Output row k is the elementwise max over ``a[groups[k]]``. The
    subgradient routes each column's gradient to the first (lowest listed
    index) row attaining the max, which makes backward deterministic
    under ties.
    """
    if a.data.ndim != 2:
        raise ShapeError("row_max_over_set: needs a matrix")
    data = a.data
    d = a.shape[1]
    contiguous = None
    if all(isinstance(g, range) for g in groups):
        starts = [g.start for g in groups]
        stops = [g.stop for g in groups]
        if any(g.step != 1 or len(g) == 0 for g in groups):
            contiguous = None
        elif starts[0] == 0 and stops[-1] == data.shape[0] and \
                all(s == t for s, t in zip(starts[1:], stops[:-1])):
            contiguous = np.asarray(starts, dtype=np.intp)
    if contiguous is not None:
        # Segment fast path used by EdgeConvolution.
        out_data = np.maximum.reduceat(data, contiguous, axis=0)
        idx_groups = None
    else:
        idx_groups = [np.asarray(g, dtype=np.intp) for g in groups]
        for k, idx in enumerate(idx_groups):
            if idx.size == 0:
                raise ShapeError(f"row_max_over_set: group {k} is empty")
        out_data = np.empty((len(idx_groups), d))
        for k, idx in enumerate(idx_groups):
            out_data[k] = data[idx].max(axis=0)

    def backward(g):
        ga = np.zeros_like(data)
        n_groups = out_data.shape[0]
        winners = np.empty((n_groups, d), dtype=np.intp)
        if idx_groups is None:
            bounds = list(contiguous) + [data.shape[0]]
            for k in range(n_groups):
                block = data[bounds[k]:bounds[k + 1]]
                winners[k] = np.argmax(block, axis=0) + bounds[k]  # first max wins
        else:
            for k, idx in enumerate(idx_groups):
                winners[k] = idx[np.argmax(data[idx], axis=0)]
        cols = np.broadcast_to(np.arange(d), (n_groups, d))
        np.add.at(ga, (winners.ravel(), cols.ravel()), g.ravel())
        a._accumulate(ga)

    return _record(out_data, (a,), backward, "row_max_over_set")


def l2_normalize(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Row-wise L2 normalization."""
    if a.data.ndim != 2:
        raise ShapeError("l2_normalize: needs a matrix")
    norms = np.maximum(np.linalg.norm(a.data, axis=1, keepdims=True), eps)
    out_data = a.data / norms

    def backward(g):
        # d(x/||x||) = (g - y * <g, y>) / ||x|| per row
        dots = np.sum(g * out_data, axis=1, keepdims=True)
        a._accumulate((g - out_data * dots) / norms)

    return _record(out_data, (a,), backward, "l2_normalize")


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Column-wise batch normalization over the row dimension.

    Train mode uses batch statistics and updates the running buffers in
    place (they never join the tape); eval mode is a fixed affine map of
    the running statistics.
    """
    if x.data.ndim != 2:
        raise ShapeError("batch_norm: needs a matrix")
    d = x.shape[1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError("batch_norm: gamma/beta must have one entry per column")

    if training:
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)  # biased, matching the normalization below
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu) * inv_std
        out_data = gamma.data * xhat + beta.data
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var

        n = x.shape[0]

        def backward(g):
            if beta.requires_grad:
                beta._accumulate(g.sum(axis=0))
            if gamma.requires_grad:
                gamma._accumulate((g * xhat).sum(axis=0))
            if x.requires_grad:
                gxhat = g * gamma.data
                # Classic batch-norm backward, per column.
                gx = (inv_std / n) * (
                    n * gxhat
                    - gxhat.sum(axis=0)
                    - xhat * (gxhat * xhat).sum(axis=0)
                )
                x._accumulate(gx)

        return _record(out_data, (x, gamma, beta), backward, "batch_norm")

    inv_std = 1.0 / np.sqrt(running_var + eps)
    xhat = (x.data - running_mean) * inv_std
    out_data = gamma.data * xhat + beta.data

    def backward(g):
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=0))
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=0))
        if x.requires_grad:
            x._accumulate(g * gamma.data * inv_std)

    return _record(out_data, (x, gamma, beta), backward, "batch_norm")


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Per-row cross entropy of softmax(logits) against integer labels.

    Returns the (n,) vector of losses; reduce with mean() as needed.
    """
    if logits.data.ndim != 2:
        raise ShapeError("softmax_cross_entropy: logits must be (n, C)")
    y = np.asarray(labels, dtype=np.intp)
    n, c = logits.shape
    if y.shape != (n,):
        raise ShapeError(f"softmax_cross_entropy: labels must be ({n},), got {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= c):
        raise LabelError(f"softmax_cross_entropy: label outside [0, {c})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    out_data = lse - shifted[np.arange(n), y]
    softmax = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)

    def backward(g):
        gl = softmax * g[:, None]
        gl[np.arange(n), y] -= g
        logits._accumulate(gl)

    return _record(out_data, (logits,), backward, "softmax_cross_entropy")


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Compare autodiff gradients of scalar f against central differences.

    Returns the max over coordinates of |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
    f must be smooth at x (keep inputs away from relu kinks and max ties).
    """
    x.data = np.ascontiguousarray(x.data)  # FD below perturbs via a flat view
    x.zero_grad()
    out = f(x)
    if out.size != 1:
        raise ShapeError("grad_check: f must be scalar-valued")
    out.backward()
    g_ad = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    g_fd = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    fd_flat = g_fd.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + eps
        f_plus = float(f(x).data)
        flat[j] = orig - eps
        f_minus = float(f(x).data)
        flat[j] = orig
        fd_flat[j] = (f_plus - f_minus) / (2.0 * eps)

    denom = np.maximum(1.0, np.maximum(np.abs(g_ad), np.abs(g_fd)))
    return float(np.max(np.abs(g_ad - g_fd) / denom)) if flat.size else 0.0


# ---------------------------------------------------------------------------
# Parameter checkpoints
# ---------------------------------------------------------------------------


def save_arrays(path, arrays: dict[str, np.ndarray], header: dict | None = None) -> None:
    """Write named arrays as JSON: name -> {shape, data}. Lossless round-trip."""
    doc = {
        "header": header or {},
        "params": {
            name: {"shape": list(arr.shape), "data": np.asarray(arr, dtype=np.float64).reshape(-1).tolist()}
            for name, arr in arrays.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint written by save_arrays."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        params = {
            name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
            for name, entry in doc["params"].items()
        }
        return params, doc.get("header", {})
    except FileNotFoundError:
        raise
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"unreadable checkpoint {path}: {e}") from e
