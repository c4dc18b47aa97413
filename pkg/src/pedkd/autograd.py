"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op builds a node holding its parents and a closure that pushes the
output gradient back to them. :func:`backward` walks the recorded graph once in
reverse topological order. Ops on tensors that do not require gradients record
nothing, so inference runs without graph overhead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels


class ContractError(ValueError):
    """Raised when an operation is called outside its preconditions."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, op: str) -> None:
    # a finite sum implies finite entries; only fall back to the full scan on doubt
    if np.isfinite(arr.sum()):
        return
    if not np.isfinite(arr).all():
        raise FloatingPointError(f"non-finite value produced by op '{op}'")


def _node(data: np.ndarray, parents: Sequence[Tensor], op: str,
          backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, (a, b), "add",
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data - b.data, (a, b), "sub",
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data * b.data, (a, b), "mul",
                 lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _node(out, (a, b), "div",
                 lambda g: (unbroadcast(g / b.data, a.shape),
                            unbroadcast(-g * out / b.data, b.shape)))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    return _node(a.data ** p, (a,), "pow", lambda g: (g * p * a.data ** (p - 1),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), "exp", lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), "log", lambda g: (g / a.data,))


def clamp_min(a, lo: float) -> Tensor:
    """max(a, lo); the gradient is 0 where the clamp is active."""
    a = as_tensor(a)
    mask = a.data >= lo
    return _node(np.where(mask, a.data, lo), (a,), "clamp_min", lambda g: (g * mask,))


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = sigmoid_np(a.data)
    return _node(out, (a,), "sigmoid", lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), "tanh", lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _node(a.data * mask, (a,), "relu", lambda g: (g * mask,))


# ------------------------------------------------------------------ reductions

def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(np.asarray(out), (a,), "sum", bw)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.size // max(np.asarray(out).size, 1)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return _node(np.asarray(out), (a,), "mean", bw)


# --------------------------------------------------------------------- shaping

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.reshape(shape), (a,), "reshape", lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _node(a.data.transpose(axes), (a,), "transpose", lambda g: (g.transpose(inv),))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _node(np.array(a.data[idx]), (a,), "getitem", bw)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _node(out, ts, "concat", lambda g: tuple(np.split(g, bounds, axis=axis)))


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ContractError("matmul needs operands of rank >= 2")

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (None if ga is None else unbroadcast(ga, a.shape),
                None if gb is None else unbroadcast(gb, b.shape))

    return _node(np.matmul(a.data, b.data), (a, b), "matmul", bw)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    out = a.data - a.data.max(axis=axis, keepdims=True)
    np.exp(out, out=out)
    out /= out.sum(axis=axis, keepdims=True)

    def bw(g):
        gx = g * out
        gx -= out * gx.sum(axis=axis, keepdims=True)
        return (gx,)

    return _node(out, (a,), "softmax", bw)


def self_attention(qkv, heads: int) -> Tensor:
    """Multi-head scaled dot-product self-attention on packed projections.

    qkv: (B, T, 3D) laid out as [q | k | v]; returns (B, T, D).
    """
    qkv = as_tensor(qkv)
    B, T, D3 = qkv.shape
    if D3 % (3 * heads):
        raise ContractError(f"packed width {D3} not divisible by 3 x {heads} heads")
    D = D3 // 3
    dh = D // heads
    scale = 1.0 / np.sqrt(dh)
    parts = qkv.data.reshape(B, T, 3, heads, dh).transpose(2, 0, 3, 1, 4)
    q, k, v = parts[0], parts[1], parts[2]                 # (B, h, T, dh)
    att = np.matmul(q, np.swapaxes(k, -1, -2))
    att *= scale
    att -= att.max(axis=-1, keepdims=True)
    np.exp(att, out=att)
    att /= att.sum(axis=-1, keepdims=True)
    y = np.matmul(att, v).transpose(0, 2, 1, 3).reshape(B, T, D)

    def bw(g):
        gy = g.reshape(B, T, heads, dh).transpose(0, 2, 1, 3)
        gv = np.matmul(np.swapaxes(att, -1, -2), gy)
        gs = np.matmul(gy, np.swapaxes(v, -1, -2))
        gs -= (gs * att).sum(axis=-1, keepdims=True)
        gs *= att
        gs *= scale
        gq = np.matmul(gs, k)
        gk = np.matmul(np.swapaxes(gs, -1, -2), q)
        return (np.stack([gq, gk, gv]).transpose(1, 3, 0, 2, 4).reshape(B, T, D3),)

    return _node(y, (qkv,), "self_attention", bw)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    def bw(g):
        gxhat = g * gain.data
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        return (gx, unbroadcast(g * xhat, gain.shape), unbroadcast(g, bias.shape))

    return _node(xhat * gain.data + bias.data, (x, gain, bias), "layer_norm", bw)


def conv2d(x, w, b=None, pad: int = 1) -> Tensor:
    """Stride-1 convolution. x: (B, C, H, W); w: (O, C, k, k); b: (O,)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1] or w.shape[2] != w.shape[3]:
        raise ContractError(f"conv2d shape mismatch: x{x.shape} w{w.shape}")
    B, C, H, W = x.shape
    O, _, k, _ = w.shape
    Ho, Wo = H + 2 * pad - k + 1, W + 2 * pad - k + 1
    cols = kernels.im2col(x.data, k, pad)
    wm = w.data.reshape(O, -1)
    out = np.matmul(wm, cols).reshape(B, O, Ho, Wo)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        out = out + b.data.reshape(1, O, 1, 1)
        parents.append(b)

    def bw(g):
        gm = g.reshape(B, O, Ho * Wo)
        gw = np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape) if w.requires_grad else None
        gx = kernels.col2im(np.matmul(wm.T, gm), C, H, W, k, pad) if x.requires_grad else None
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return _node(out, parents, "conv2d", bw)


def avg_pool2d(x) -> Tensor:
    """2x2 non-overlapping mean pooling."""
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ContractError(f"avg_pool2d needs even spatial dims, got {x.shape}")

    def bw(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25,)

    return _node(kernels.avg_pool2(x.data), (x,), "avg_pool2d", bw)


# ----------------------------------------------------------------------- losses

def smooth_l1(pred, target, beta: float = 1.0) -> Tensor:
    """Mean Huber-style loss: 0.5 d^2/beta inside |d|<beta, |d|-0.5 beta outside."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ContractError(f"smooth_l1 shape mismatch: {pred.shape} vs {target.shape}")
    if beta <= 0:
        raise ContractError("beta must be positive")
    d = pred.data - target.data
    ad = np.abs(d)
    inner = ad < beta
    val = np.where(inner, 0.5 * d * d / beta, ad - 0.5 * beta).mean()
    n = d.size

    def bw(g):
        dd = np.where(inner, d / beta, np.sign(d)) * (g / n)
        return (dd, -dd)

    return _node(np.asarray(val), (pred, target), "smooth_l1", bw)


# --------------------------------------------------------------------- backward

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(output: Tensor, params: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Backpropagate from a scalar ``output``.

    Leaf gradients are accumulated into ``.grad``. When ``params`` is given, a
    mapping param -> gradient is returned, with zeros for params the output
    does not depend on.
    """
    if output.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
    grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    for node in reversed(_topo_order(output)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    if params is None:
        return {}
    return {p: (p.grad if p.grad is not None else np.zeros_like(p.data)) for p in params}


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ----------------------------------------------------------------- grad check

@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    worst_param: str = ""

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def grad_check(f: Callable[..., Tensor], inputs: Tensor | Sequence[Tensor], eps: float = 1e-5,
               max_coords: int | None = None, seed: int = 0) -> GradCheckReport:
    """Compare autodiff gradients of scalar ``f(*inputs)`` with central differences.

    The error per coordinate is |analytic - numeric| / max(1, |analytic|).
    With ``max_coords`` set, at most that many coordinates per input tensor are
    probed, chosen by a seeded generator.
    """
    if not 0 < eps <= 1e-2:
        raise ContractError("eps must lie in (0, 1e-2]")
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    inputs = list(inputs)
    for t in inputs:
        t.requires_grad = True
    zero_grad(inputs)
    out = f(*inputs)
    if not isinstance(out, Tensor) or out.size != 1:
        raise ContractError("grad_check needs f to return a scalar Tensor")
    analytic = backward(out, inputs)
    rng = np.random.default_rng(seed)
    worst, worst_name, n = 0.0, "", 0
    for i, t in enumerate(inputs):
        t.data = np.ascontiguousarray(t.data)
        flat = t.data.reshape(-1)  # a view, so probes write through
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = rng.choice(flat.size, size=max_coords, replace=False)
        ga = analytic[t].reshape(-1)
        for j in idx:
            orig = flat[j]
            flat[j] = orig + eps
            fp = f(*inputs).item()
            flat[j] = orig - eps
            fm = f(*inputs).item()
            flat[j] = orig
            num = (fp - fm) / (2 * eps)
            err = abs(ga[j] - num) / max(1.0, abs(ga[j]))
            n += 1
            if err > worst:
                worst, worst_name = err, t.name or f"input{i}"
    zero_grad(inputs)
    return GradCheckReport(worst, n, worst_name)
