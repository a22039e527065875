"""Dense tensors with reverse-mode automatic differentiation.

Small enough to read in one sitting, big enough to train the graph
decision-transformer: matmul/elementwise primitives, row softmax,
layer norm, embedding lookup, and a finite-difference gradient checker.
All data is stored as contiguous row-major numpy arrays in the current
default precision (float32 for training, float64 for verification).
"""
from __future__ import annotations

import numpy as np

_DEFAULT_DTYPE = np.float32


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


def default_dtype():
    return _DEFAULT_DTYPE


class precision:
    """Context manager switching the default float precision."""

    def __init__(self, dtype):
        self._dtype = dtype
        self._saved = None

    def __enter__(self):
        global _DEFAULT_DTYPE
        self._saved = _DEFAULT_DTYPE
        set_default_dtype(self._dtype)
        return self

    def __exit__(self, *exc):
        global _DEFAULT_DTYPE
        _DEFAULT_DTYPE = self._saved
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        arr = np.asarray(data)
        if arr.dtype != _DEFAULT_DTYPE:
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = np.ascontiguousarray(arr)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def const(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _needs_grad(*ts: Tensor) -> bool:
    return any(t.requires_grad or t._parents for t in ts)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcasted gradient back to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _acc(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[-1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, _parents=(a, b))

    def backward(g):
        _acc(a, g @ b.data.T)
        _acc(b, a.data.T @ g)

    out._backward = backward if _needs_grad(a, b) else None
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, _parents=(a, b))

    def backward(g):
        _acc(a, _unbroadcast(g, a.data.shape))
        _acc(b, _unbroadcast(g, b.data.shape))

    out._backward = backward if _needs_grad(a, b) else None
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data, _parents=(a, b))

    def backward(g):
        _acc(a, _unbroadcast(g * b.data, a.data.shape))
        _acc(b, _unbroadcast(g * a.data, b.data.shape))

    out._backward = backward if _needs_grad(a, b) else None
    return out


def scale(a: Tensor, c: float) -> Tensor:
    c = _DEFAULT_DTYPE(c)
    out = Tensor(a.data * c, _parents=(a,))

    def backward(g):
        _acc(a, g * c)

    out._backward = backward if _needs_grad(a) else None
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0), _parents=(a,))

    def backward(g):
        _acc(a, g * (a.data > 0))

    out._backward = backward if _needs_grad(a) else None
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y, _parents=(a,))

    def backward(g):
        _acc(a, g * (1.0 - y * y))

    out._backward = backward if _needs_grad(a) else None
    return out


def row_softmax(a: Tensor) -> Tensor:
    """Softmax along the last axis, shifted by the row max for stability."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y, _parents=(a,))

    def backward(g):
        s = (g * y).sum(axis=-1, keepdims=True)
        _acc(a, y * (g - s))

    out._backward = backward if _needs_grad(a) else None
    return out


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row (last axis) to zero mean and unit variance."""
    if a.data.shape[-1] == 0:
        raise ValueError("layer_norm on zero-length rows")
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (a.data - mu) * inv
    out = Tensor(y, _parents=(a,))

    def backward(g):
        n = a.data.shape[-1]
        gy = g - g.mean(axis=-1, keepdims=True) - y * (g * y).sum(
            axis=-1, keepdims=True
        ) / n
        _acc(a, gy * inv)

    out._backward = backward if _needs_grad(a) else None
    return out


def mean_rows(a: Tensor) -> Tensor:
    """Mean over axis 0, keeping a (1, d) row vector."""
    n = a.data.shape[0]
    if n == 0:
        raise ValueError("mean_rows of an empty tensor")
    out = Tensor(a.data.mean(axis=0, keepdims=True), _parents=(a,))

    def backward(g):
        _acc(a, np.broadcast_to(g / n, a.data.shape).copy())

    out._backward = backward if _needs_grad(a) else None
    return out


def concat_rows(tensors) -> Tensor:
    tensors = list(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=0),
                 _parents=tuple(tensors))
    sizes = [t.data.shape[0] for t in tensors]

    def backward(g):
        ofs = 0
        for t, n in zip(tensors, sizes):
            _acc(t, g[ofs:ofs + n])
            ofs += n

    out._backward = backward if _needs_grad(*tensors) else None
    return out


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    key = [slice(None)] * a.data.ndim
    key[axis] = slice(start, stop)
    key = tuple(key)
    out = Tensor(a.data[key].copy(), _parents=(a,))

    def backward(g):
        full = np.zeros_like(a.data)
        full[key] = g
        _acc(a, full)

    out._backward = backward if _needs_grad(a) else None
    return out


def embedding_lookup(table: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    out = Tensor(table.data[idx], _parents=(table,))

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        _acc(table, full)

    out._backward = backward if _needs_grad(table) else None
    return out


def dot(a: Tensor, b: Tensor) -> Tensor:
    """Sum of elementwise products, returned as a (1, 1) scalar."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"dot shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(np.array([[np.sum(a.data * b.data)]]), _parents=(a, b))

    def backward(g):
        _acc(a, g[0, 0] * b.data)
        _acc(b, g[0, 0] * a.data)

    out._backward = backward if _needs_grad(a, b) else None
    return out


def transpose(a: Tensor) -> Tensor:
    out = Tensor(a.data.T.copy(), _parents=(a,))

    def backward(g):
        _acc(a, g.T)

    out._backward = backward if _needs_grad(a) else None
    return out


# -- composites used throughout the model ----------------------------------

def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return add(y, b) if b is not None else y


_GELU_C = 0.7978845608028654  # sqrt(2/pi)


def gelu(x: Tensor) -> Tensor:
    x3 = mul(mul(x, x), x)
    inner = scale(add(x, scale(x3, 0.044715)), _GELU_C)
    return mul(scale(x, 0.5), add(tanh(inner), const(np.ones((1, 1)))))


def backward(loss: Tensor) -> None:
    """Populate gradients of every tensor reachable from `loss`.

    Gradients are reset at the start of each call; fan-out within one
    graph accumulates as expected.
    """
    if loss.data.size != 1:
        raise ValueError("backward requires a scalar loss")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    for node in topo:
        node.grad = np.zeros_like(node.data)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


def finite_difference_check(f, params, eps: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference grads.

    `f` is a zero-argument callable returning a scalar Tensor, reading the
    given parameter tensors. Intended to run in float64.
    """
    loss = f()
    backward(loss)
    ad = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
          for name, p in params.items()}
    max_rel = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        gflat = ad[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp = float(f().data.reshape(()))
            flat[i] = orig - eps
            lm = float(f().data.reshape(()))
            flat[i] = orig
            fd = (lp - lm) / (2.0 * eps)
            g = gflat[i]
            rel = abs(g - fd) / max(1e-8, abs(g) + abs(fd))
            if rel > max_rel:
                max_rel = rel
    return max_rel
