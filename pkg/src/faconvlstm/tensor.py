"""Minimal float64 tensor engine with tape-based reverse-mode autodiff.

Layout convention for image-like tensors is channels-last ``(n, h, w, c)``.
Convolutions are cross-correlations (no kernel flip) with zero
same-padding, so spatial dims are preserved.
"""

from __future__ import annotations

from collections import defaultdict
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64


class DimensionError(ValueError):
    """Shape mismatch between operands; the message names the axis."""


class ConfigError(ValueError):
    """Invalid hyperparameter (even kernel, zero dilation, ...)."""


class TapeStateError(RuntimeError):
    """Backward requested on something no forward op recorded."""


# --------------------------------------------------------------------------
# grad mode and MAC instrumentation

_grad_enabled = True
_counters: list["MacCounter"] = []
_scopes: list[str] = ["other"]


@contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class MacCounter:
    """Multiply-accumulate tally, bucketed by the active :func:`mac_scope`."""

    def __init__(self):
        self.by_scope: dict[str, int] = defaultdict(int)

    @property
    def total(self) -> int:
        return sum(self.by_scope.values())

    def __getitem__(self, scope: str) -> int:
        return self.by_scope.get(scope, 0)


@contextmanager
def count_macs():
    counter = MacCounter()
    _counters.append(counter)
    try:
        yield counter
    finally:
        _counters.remove(counter)


@contextmanager
def mac_scope(name: str):
    _scopes.append(name)
    try:
        yield
    finally:
        _scopes.pop()


def _tally(n: int) -> None:
    if _counters:
        scope = _scopes[-1]
        for c in _counters:
            c.by_scope[scope] += int(n)


# --------------------------------------------------------------------------
# Tensor


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op: str | None = None
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self):
        tag = self.op or ("param" if self.requires_grad else "const")
        return f"Tensor(shape={self.shape}, {tag})"

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return mul(self, 1.0 / _as_array(o))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=DTYPE)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    out.op = op
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# --------------------------------------------------------------------------
# elementwise / structural ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,), "exp")


def sin(x: Tensor) -> Tensor:
    return _make(np.sin(x.data), (x,), lambda g: (g * np.cos(x.data),), "sin")


def square(x: Tensor) -> Tensor:
    return _make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def sqrt(x: Tensor) -> Tensor:
    y = np.sqrt(x.data)
    return _make(y, (x,), lambda g: (0.5 * g / y,), "sqrt")


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    y = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(y, (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    y = x.data.mean(axis=axis, keepdims=keepdims)
    n = x.data.size // max(y.size, 1) if axis is not None else x.data.size

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return _make(y, (x,), backward, "mean")


def reshape(x: Tensor, shape) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def getitem(x: Tensor, idx) -> Tensor:
    def backward(g):
        full = np.zeros(x.shape, dtype=DTYPE)
        if _needs_add_at(idx):
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        return (full,)

    return _make(x.data[idx], (x,), backward, "getitem")


def _needs_add_at(idx) -> bool:
    # advanced (array) indexing may repeat positions
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    y = np.concatenate([x.data for x in xs], axis=axis)
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(y, xs, backward, "concat")


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    y = np.stack([x.data for x in xs], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(xs)))

    return _make(y, xs, backward, "stack")


def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting; tallies MACs."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise DimensionError(
            f"matmul inner axis mismatch: {a.shape[-1]} vs {b.shape[-2 if b.ndim > 1 else 0]}"
        )
    y = np.matmul(a.data, b.data)
    _tally(y.size * a.shape[-1])

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(y, (a, b), backward, "matmul")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``."""
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), backward, "softmax")


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate == 0."""
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, keep)


# --------------------------------------------------------------------------
# convolution / normalization primitives


def _check_rank4(x: Tensor, what: str) -> None:
    if x.ndim != 4:
        raise DimensionError(f"{what}: expected rank-4 (n,h,w,c) tensor, got shape {x.shape}")


def _check_kernel(k: int, dilation: int) -> None:
    if k < 1 or k % 2 == 0:
        raise ConfigError(f"kernel size must be odd and positive, got {k}")
    if dilation < 1:
        raise ConfigError(f"dilation must be >= 1, got {dilation}")


def conv2d_pointwise(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """1x1 convolution: ``out[n,i,j,:] = x[n,i,j,:] @ weight + bias``."""
    x, weight = as_tensor(x), as_tensor(weight)
    _check_rank4(x, "conv2d_pointwise")
    if weight.ndim != 2 or weight.shape[0] != x.shape[3]:
        raise DimensionError(
            f"conv2d_pointwise: channel axis of x is {x.shape[3]} but weight rows are "
            f"{weight.shape[0] if weight.ndim else None}"
        )
    cin, cout = weight.shape
    y = np.matmul(x.data, weight.data)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise DimensionError(f"conv2d_pointwise: bias axis 0 must be {cout}, got {bias.shape}")
        y = y + bias.data
        parents.append(bias)
    _tally(x.size // cin * cin * cout)

    def backward(g):
        gx = np.matmul(g, weight.data.T)
        gw = x.data.reshape(-1, cin).T @ g.reshape(-1, cout)
        if bias is None:
            return gx, gw
        return gx, gw, g.reshape(-1, cout).sum(axis=0)

    return _make(y, parents, backward, "conv2d_pointwise")


def conv2d_depthwise(x: Tensor, kernel: Tensor, dilation: int = 1) -> Tensor:
    """Per-channel k x k cross-correlation, zero same-padding, dilation ``d``."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    _check_rank4(x, "conv2d_depthwise")
    if kernel.ndim != 3 or kernel.shape[0] != kernel.shape[1]:
        raise DimensionError(f"conv2d_depthwise: kernel must be (k,k,c), got {kernel.shape}")
    k = kernel.shape[0]
    _check_kernel(k, dilation)
    if kernel.shape[2] != x.shape[3]:
        raise DimensionError(
            f"conv2d_depthwise: channel axis mismatch, x has {x.shape[3]}, kernel has {kernel.shape[2]}"
        )
    n, h, w, c = x.shape
    pad = (k - 1) * dilation // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    K = kernel.data
    y = np.zeros(x.shape, dtype=DTYPE)
    for a in range(k):
        for b in range(k):
            ia, ib = a * dilation, b * dilation
            y += xp[:, ia : ia + h, ib : ib + w, :] * K[a, b]
    _tally(n * h * w * c * k * k)

    def backward(g):
        gxp = np.zeros_like(xp)
        gk = np.empty_like(K)
        for a in range(k):
            for b in range(k):
                ia, ib = a * dilation, b * dilation
                gxp[:, ia : ia + h, ib : ib + w, :] += g * K[a, b]
                gk[a, b] = (g * xp[:, ia : ia + h, ib : ib + w, :]).sum(axis=(0, 1, 2))
        return gxp[:, pad : pad + h, pad : pad + w, :], gk

    return _make(y, (x, kernel), backward, "conv2d_depthwise")


def conv2d_full(x: Tensor, kernel: Tensor, bias: Tensor | None = None, dilation: int = 1) -> Tensor:
    """Dense k x k cross-correlation mixing all input channels (im2col)."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    _check_rank4(x, "conv2d_full")
    if kernel.ndim != 4 or kernel.shape[0] != kernel.shape[1]:
        raise DimensionError(f"conv2d_full: kernel must be (k,k,cin,cout), got {kernel.shape}")
    k, _, cin, cout = kernel.shape
    _check_kernel(k, dilation)
    if cin != x.shape[3]:
        raise DimensionError(f"conv2d_full: channel axis mismatch, x has {x.shape[3]}, kernel expects {cin}")
    n, h, w, _ = x.shape
    pad = (k - 1) * dilation // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    cols = np.empty((n, h, w, k, k, cin), dtype=DTYPE)
    for a in range(k):
        for b in range(k):
            cols[:, :, :, a, b, :] = xp[:, a * dilation : a * dilation + h, b * dilation : b * dilation + w, :]
    cols = cols.reshape(n, h, w, k * k * cin)
    kmat = kernel.data.reshape(k * k * cin, cout)
    y = np.matmul(cols, kmat)
    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise DimensionError(f"conv2d_full: bias axis 0 must be {cout}, got {bias.shape}")
        y = y + bias.data
        parents.append(bias)
    _tally(n * h * w * k * k * cin * cout)

    def backward(g):
        gk = (cols.reshape(-1, k * k * cin).T @ g.reshape(-1, cout)).reshape(kernel.shape)
        gcols = np.matmul(g, kmat.T).reshape(n, h, w, k, k, cin)
        gxp = np.zeros_like(xp)
        for a in range(k):
            for b in range(k):
                gxp[:, a * dilation : a * dilation + h, b * dilation : b * dilation + w, :] += gcols[:, :, :, a, b, :]
        gx = gxp[:, pad : pad + h, pad : pad + w, :]
        if bias is None:
            return gx, gk
        return gx, gk, g.reshape(-1, cout).sum(axis=0)

    return _make(y, parents, backward, "conv2d_full")


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial axes: (n,h,w,c) -> (n,c)."""
    _check_rank4(x, "global_avg_pool")
    if x.shape[1] * x.shape[2] < 1:
        raise DimensionError("global_avg_pool: empty spatial extent")
    return mean(x, axis=(1, 2))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5, groups: int = 1) -> Tensor:
    """Normalize the channel vector at every site (in ``groups`` chunks), then affine.

    ``groups == 1`` is LayerNorm over channels; larger values split the
    channel axis into equally sized groups normalized independently.
    """
    if eps <= 0:
        raise ConfigError("layer_norm eps must be > 0")
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[-1]
    if c % groups:
        raise ConfigError(f"channel count {c} not divisible by {groups} norm groups")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"layer_norm: gamma/beta must have shape ({c},)")
    m = c // groups
    xg = x.data.reshape(x.shape[:-1] + (groups, m))
    mu = xg.mean(axis=-1, keepdims=True)
    xc = xg - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = (xc * inv).reshape(x.shape)
    y = xhat * gamma.data + beta.data

    def backward(g):
        red = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=red)
        gbeta = g.sum(axis=red)
        gxh = (g * gamma.data).reshape(xg.shape)
        xh = xhat.reshape(xg.shape)
        gx = inv * (gxh - gxh.mean(axis=-1, keepdims=True) - xh * (gxh * xh).mean(axis=-1, keepdims=True))
        return gx.reshape(x.shape), ggamma, gbeta

    return _make(y, (x, gamma, beta), backward, "layer_norm")


def group_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5, groups: int = 1) -> Tensor:
    """GroupNorm on (n,h,w,c): statistics over (h, w, channel group) per sample.

    ``groups == 1`` is LayerNorm over the whole (h, w, c) map.
    """
    if eps <= 0:
        raise ConfigError("group_norm eps must be > 0")
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    _check_rank4(x, "group_norm")
    n, h, w, c = x.shape
    if c % groups:
        raise ConfigError(f"channel count {c} not divisible by {groups} norm groups")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"group_norm: gamma/beta must have shape ({c},)")
    xg = x.data.reshape(n, h * w, groups, c // groups)
    red = (1, 3)
    mu = xg.mean(axis=red, keepdims=True)
    xc = xg - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=red, keepdims=True) + eps)
    xhat = (xc * inv).reshape(x.shape)
    y = xhat * gamma.data + beta.data

    def backward(g):
        ggamma = (g * xhat).sum(axis=(0, 1, 2))
        gbeta = g.sum(axis=(0, 1, 2))
        gxh = (g * gamma.data).reshape(xg.shape)
        xh = xhat.reshape(xg.shape)
        gx = inv * (gxh - gxh.mean(axis=red, keepdims=True) - xh * (gxh * xh).mean(axis=red, keepdims=True))
        return gx.reshape(x.shape), ggamma, gbeta

    return _make(y, (x, gamma, beta), backward, "group_norm")


# --------------------------------------------------------------------------
# reverse pass


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Leaves (parameters) accumulate, so call ``ParameterStore.zero_grad``
    between steps.
    """
    if not isinstance(loss, Tensor) or loss.op is None:
        raise TapeStateError("backward() called on a tensor that no forward op produced")
    if loss.size != 1:
        raise TapeStateError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
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

    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=DTYPE)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, gp in zip(node._parents, node._backward(g)):
            if gp is None or not p.requires_grad:
                continue
            key = id(p)
            grads[key] = grads[key] + gp if key in grads else gp


def finite_diff_grad(loss_fn: Callable[[np.ndarray], float], theta: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient estimate of ``loss_fn`` at ``theta``."""
    if step <= 0:
        raise ValueError("step must be > 0")
    theta = np.array(theta, dtype=DTYPE)
    grad = np.empty_like(theta)
    flat, gflat = theta.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = loss_fn(theta)
        flat[i] = orig - step
        fm = loss_fn(theta)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * step)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``||a-b|| / max(||a||, ||b||)``, 0 when both vanish."""
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom < 1e-300:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(
    params: Iterable[Tensor], build_loss: Callable[[], Tensor], step: float = 1e-5
) -> float:
    """Relative error between backward() and central differences.

    The error is taken over the concatenation of all parameter gradients.
    ``build_loss`` must rebuild the graph from the current parameter data.
    """
    params = list(params)
    for p in params:
        p.grad = None
    backward(build_loss())
    analytic, numeric = [], []
    with no_grad():
        for p in params:
            analytic.append(np.ravel(p.grad) if p.grad is not None else np.zeros(p.size))
            orig = p.data.copy()

            def f(theta, p=p):
                p.data = theta
                return float(build_loss().data)

            numeric.append(np.ravel(finite_diff_grad(f, orig, step)))
            p.data = orig
    return relative_error(np.concatenate(analytic), np.concatenate(numeric))
